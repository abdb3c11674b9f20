//! IIR filter design (Butterworth via the bilinear transform, second-order
//! notch) and zero-phase forward-backward application in second-order sections.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One biquad: `[b0, b1, b2, a0, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    Lowpass { cutoff_hz: f64, order: usize },
    Highpass { cutoff_hz: f64, order: usize },
    Bandpass { low_hz: f64, high_hz: f64, order: usize },
    Notch { freq_hz: f64, q: f64 },
}

impl FilterSpec {
    /// Designs the filter for sampling rate `fs` as cascaded biquads.
    pub fn design(&self, fs: f64) -> Result<Vec<Section>> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Config(format!("sampling rate {fs} must be positive")));
        }
        let nyq = fs / 2.0;
        let corner = |f: f64| -> Result<f64> {
            if !(f > 0.0 && f < nyq) {
                return Err(Error::Config(format!(
                    "filter corner {f} Hz must lie strictly between 0 and the Nyquist frequency {nyq} Hz"
                )));
            }
            Ok(f)
        };
        let order_ok = |order: usize| -> Result<usize> {
            if order == 0 {
                return Err(Error::Config("filter order must be at least 1".into()));
            }
            Ok(order)
        };
        let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
        match *self {
            FilterSpec::Lowpass { cutoff_hz, order } => {
                let (z, p, k) = butter_prototype(order_ok(order)?);
                let (z, p, k) = lp2lp(&z, &p, k, warp(corner(cutoff_hz)?));
                Ok(zpk_to_sos(bilinear(&z, &p, k, fs)))
            }
            FilterSpec::Highpass { cutoff_hz, order } => {
                let (z, p, k) = butter_prototype(order_ok(order)?);
                let (z, p, k) = lp2hp(&z, &p, k, warp(corner(cutoff_hz)?));
                Ok(zpk_to_sos(bilinear(&z, &p, k, fs)))
            }
            FilterSpec::Bandpass { low_hz, high_hz, order } => {
                let (lo, hi) = (warp(corner(low_hz)?), warp(corner(high_hz)?));
                if lo >= hi {
                    return Err(Error::Config(format!("band edges {low_hz}..{high_hz} Hz are not increasing")));
                }
                let (z, p, k) = butter_prototype(order_ok(order)?);
                let (z, p, k) = lp2bp(&z, &p, k, (lo * hi).sqrt(), hi - lo);
                Ok(zpk_to_sos(bilinear(&z, &p, k, fs)))
            }
            FilterSpec::Notch { freq_hz, q } => {
                if !(q > 0.0) {
                    return Err(Error::Config(format!("notch quality factor {q} must be positive")));
                }
                Ok(vec![notch(corner(freq_hz)?, q, fs)])
            }
        }
    }
}

type Zpk = (Vec<Complex64>, Vec<Complex64>, f64);

/// Analog Butterworth prototype with unit cutoff: no zeros, poles on the left
/// half of the unit circle.
fn butter_prototype(order: usize) -> Zpk {
    let n = order as f64;
    let poles = (0..order)
        .map(|k| {
            let theta = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            Complex64::from_polar(1.0, theta)
        })
        .collect();
    (Vec::new(), poles, 1.0)
}

fn lp2lp(z: &[Complex64], p: &[Complex64], k: f64, wo: f64) -> Zpk {
    let degree = (p.len() - z.len()) as i32;
    (
        z.iter().map(|&v| v * wo).collect(),
        p.iter().map(|&v| v * wo).collect(),
        k * wo.powi(degree),
    )
}

fn lp2hp(z: &[Complex64], p: &[Complex64], k: f64, wo: f64) -> Zpk {
    let degree = p.len() - z.len();
    let mut zh: Vec<Complex64> = z.iter().map(|&v| wo / v).collect();
    zh.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    let ph = p.iter().map(|&v| wo / v).collect();
    let num: Complex64 = z.iter().map(|&v| -v).product();
    let den: Complex64 = p.iter().map(|&v| -v).product();
    (zh, ph, k * (num / den).re)
}

fn lp2bp(z: &[Complex64], p: &[Complex64], k: f64, wo: f64, bw: f64) -> Zpk {
    let degree = p.len() - z.len();
    let split = |v: &[Complex64]| -> Vec<Complex64> {
        let scaled: Vec<Complex64> = v.iter().map(|&x| x * bw / 2.0).collect();
        let root = |x: Complex64| (x * x - wo * wo).sqrt();
        scaled
            .iter()
            .map(|&x| x + root(x))
            .chain(scaled.iter().map(|&x| x - root(x)))
            .collect()
    };
    let mut zb = split(z);
    zb.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    (zb, split(p), k * bw.powi(degree as i32))
}

fn bilinear(z: &[Complex64], p: &[Complex64], k: f64, fs: f64) -> Zpk {
    let fs2 = 2.0 * fs;
    let degree = p.len() - z.len();
    let mut zd: Vec<Complex64> = z.iter().map(|&v| (fs2 + v) / (fs2 - v)).collect();
    zd.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    let pd = p.iter().map(|&v| (fs2 + v) / (fs2 - v)).collect();
    let num: Complex64 = z.iter().map(|&v| fs2 - v).product();
    let den: Complex64 = p.iter().map(|&v| fs2 - v).product();
    (zd, pd, k * (num / den).re)
}

/// Groups digital zeros and poles into biquads. Poles are taken as conjugate
/// pairs (or pairs of real poles), most resonant first; each pole pair gets the
/// two remaining zeros nearest to it. The overall gain goes into the first
/// section.
fn zpk_to_sos((z, p, k): Zpk) -> Vec<Section> {
    const IMAG_TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = p.iter().copied().filter(|v| v.im > IMAG_TOL).collect();
    let mut real: Vec<f64> = p.iter().filter(|v| v.im.abs() <= IMAG_TOL).map(|v| v.re).collect();
    complex.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    real.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let mut pole_pairs: Vec<(Complex64, Complex64)> = complex.iter().map(|&v| (v, v.conj())).collect();
    for pair in real.chunks(2) {
        let a = Complex64::new(pair[0], 0.0);
        let b = Complex64::new(pair.get(1).copied().unwrap_or(0.0), 0.0);
        pole_pairs.push((a, b));
    }
    let mut zeros = z;
    // Pad with zeros at the origin so every section has two.
    while zeros.len() < 2 * pole_pairs.len() {
        zeros.push(Complex64::new(0.0, 0.0));
    }
    let mut sos = Vec::with_capacity(pole_pairs.len());
    for (p1, p2) in pole_pairs {
        let nearest = |zeros: &mut Vec<Complex64>, target: Complex64| -> Complex64 {
            let i = (0..zeros.len())
                .min_by(|&a, &b| (zeros[a] - target).norm().total_cmp(&(zeros[b] - target).norm()))
                .expect("enough zeros");
            zeros.swap_remove(i)
        };
        let z1 = nearest(&mut zeros, p1);
        // A complex zero must be matched with its conjugate.
        let z2 = if z1.im.abs() > IMAG_TOL {
            nearest(&mut zeros, z1.conj())
        } else {
            let real_zeros: Vec<usize> = (0..zeros.len()).filter(|&i| zeros[i].im.abs() <= IMAG_TOL).collect();
            let i = real_zeros
                .into_iter()
                .min_by(|&a, &b| (zeros[a] - p2).norm().total_cmp(&(zeros[b] - p2).norm()))
                .expect("real zero available");
            zeros.swap_remove(i)
        };
        let b = [1.0, -(z1 + z2).re, (z1 * z2).re];
        let a = [1.0, -(p1 + p2).re, (p1 * p2).re];
        sos.push([b[0], b[1], b[2], a[0], a[1], a[2]]);
    }
    for c in &mut sos[0][..3] {
        *c *= k;
    }
    sos
}

/// Second-order IIR notch with -3 dB bandwidth `freq/q`.
fn notch(freq: f64, q: f64, fs: f64) -> Section {
    let w0 = 2.0 * std::f64::consts::PI * freq / fs;
    let bw = w0 / q;
    let beta = (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    [gain, -2.0 * gain * c, gain, 1.0, -2.0 * gain * c, 2.0 * gain - 1.0]
}

/// Complex frequency response of the cascade at `freq` Hz.
pub fn frequency_response(sos: &[Section], freq: f64, fs: f64) -> Complex64 {
    let w = 2.0 * std::f64::consts::PI * freq / fs;
    let zi = Complex64::from_polar(1.0, -w);
    sos.iter()
        .map(|s| (s[0] + s[1] * zi + s[2] * zi * zi) / (s[3] + s[4] * zi + s[5] * zi * zi))
        .product()
}

/// Padding length used by [`filtfilt`]: three times the cascade's tap count.
pub fn pad_length(sos: &[Section]) -> usize {
    3 * (2 * sos.len() + 1)
}

/// Steady-state section states for a unit step input.
fn steady_state(sos: &[Section]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            let (r0, r1) = (b1 - a1 * b0, b2 - a2 * b0);
            let z0 = (r0 + r1) / (1.0 + a1 + a2);
            let z1 = r1 - a2 * z0;
            let zi = [scale * z0, scale * z1];
            scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
            zi
        })
        .collect()
}

/// Causal cascade filtering in place (transposed direct form II).
fn sosfilt(sos: &[Section], x: &mut [f64], state: &mut [[f64; 2]]) {
    for (s, z) in sos.iter().zip(state.iter_mut()) {
        let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
        let (mut z0, mut z1) = (z[0], z[1]);
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z0;
            z0 = b1 * xi - a1 * y + z1;
            z1 = b2 * xi - a2 * y;
            *v = y;
        }
        *z = [z0, z1];
    }
}

/// Zero-phase forward-backward filtering with odd-reflection padding and
/// steady-state initial conditions at both passes.
pub fn filtfilt(sos: &[Section], x: &[f64]) -> Result<Vec<f64>> {
    let pad = pad_length(sos);
    if x.len() <= pad {
        return Err(Error::TooShort { what: "zero-phase filter", needed: pad + 1, got: x.len() });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = steady_state(sos);
    let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
    let mut state = scaled(ext[0]);
    sosfilt(sos, &mut ext, &mut state);
    ext.reverse();
    let mut state = scaled(ext[0]);
    sosfilt(sos, &mut ext, &mut state);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Applies [`filtfilt`] to every row of a row-major `[channels, len]` buffer.
pub fn filtfilt_rows(sos: &[Section], data: &mut [f64], len: usize) -> Result<()> {
    for row in data.chunks_mut(len) {
        let y = filtfilt(sos, row)?;
        row.copy_from_slice(&y);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_has_unit_dc_gain() {
        let sos = FilterSpec::Lowpass { cutoff_hz: 51.2, order: 8 }.design(256.0).unwrap();
        assert_eq!(sos.len(), 4);
        assert!((frequency_response(&sos, 0.0, 256.0).norm() - 1.0).abs() < 1e-12);
        assert!(frequency_response(&sos, 128.0, 256.0).norm() < 1e-12);
    }

    #[test]
    fn highpass_blocks_dc() {
        let sos = FilterSpec::Highpass { cutoff_hz: 5.0, order: 3 }.design(100.0).unwrap();
        assert_eq!(sos.len(), 2);
        assert!(frequency_response(&sos, 0.0, 100.0).norm() < 1e-12);
        assert!((frequency_response(&sos, 50.0, 100.0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corners_must_be_below_nyquist() {
        for spec in [
            FilterSpec::Lowpass { cutoff_hz: 64.0, order: 4 },
            FilterSpec::Bandpass { low_hz: 1.0, high_hz: 70.0, order: 4 },
            FilterSpec::Bandpass { low_hz: 30.0, high_hz: 10.0, order: 4 },
            FilterSpec::Notch { freq_hz: 0.0, q: 30.0 },
            FilterSpec::Lowpass { cutoff_hz: 10.0, order: 0 },
        ] {
            assert!(matches!(spec.design(128.0), Err(Error::Config(_))), "{spec:?}");
        }
    }

    #[test]
    fn steady_state_start_leaves_constant_untouched() {
        let sos = FilterSpec::Lowpass { cutoff_hz: 10.0, order: 4 }.design(128.0).unwrap();
        let y = filtfilt(&sos, &[5.0; 200]).unwrap();
        assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn short_signal_is_rejected() {
        let sos = FilterSpec::Lowpass { cutoff_hz: 10.0, order: 4 }.design(128.0).unwrap();
        assert_eq!(pad_length(&sos), 15);
        assert!(matches!(filtfilt(&sos, &[0.0; 15]), Err(Error::TooShort { needed: 16, .. })));
        assert!(filtfilt(&sos, &[0.0; 16]).is_ok());
    }
}
