use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::Segment;
use crate::model::Modality;
use crate::signal::EYE_MISSING;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Range of the per-modality scale factor; `None` disables scaling.
    pub scale: Option<(f64, f64)>,
    /// Noise standard deviation as a fraction of each channel's own standard
    /// deviation; 0 disables noise.
    pub noise_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { scale: Some((0.8, 1.2)), noise_frac: 0.05 }
    }
}

/// Scales every channel of a modality by one factor drawn from `cfg.scale` and
/// adds white Gaussian noise per channel. Eye samples marked missing (−1) are
/// left as they are and do not count towards the channel statistics.
pub fn augment<R: Rng + ?Sized>(seg: &Segment, cfg: &AugmentConfig, rng: &mut R) -> Segment {
    let mut out = seg.clone();
    for m in Modality::ALL {
        let t = out.signals.get_mut(m);
        let len = t.shape()[1];
        let s = cfg.scale.map_or(1.0, |(lo, hi)| Uniform::new_inclusive(lo, hi).sample(rng));
        let keeps = |v: f64| m != Modality::Eye || v != EYE_MISSING;
        for row in t.data_mut().chunks_mut(len) {
            let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
            for &v in row.iter().filter(|&&v| keeps(v)) {
                n += 1;
                sum += v;
                sq += v * v;
            }
            let sigma = if n > 1 {
                let mean = sum / n as f64;
                cfg.noise_frac * ((sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0).sqrt()
            } else {
                0.0
            };
            let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
            for v in row.iter_mut().filter(|v| keeps(**v)) {
                *v *= s;
                if let Some(d) = &noise {
                    *v += d.sample(rng);
                }
            }
        }
    }
    out
}
