//! Photometric and geometric clip augmentation.
//!
//! One set of augmentation parameters is drawn per call and applied to every
//! frame, so an augmented view stays temporally coherent.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SslRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub flip_prob: f64,
    /// Per-channel multiplicative jitter amplitude.
    pub color_jitter: f64,
    pub noise_sigma: f64,
    /// Lower bound of the crop side as a fraction of the frame side; 1 disables cropping.
    pub crop_scale_min: f64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            color_jitter: 0.0,
            noise_sigma: 0.0,
            crop_scale_min: 1.0,
        }
    }

    pub fn strong() -> Self {
        Self {
            flip_prob: 0.5,
            color_jitter: 0.2,
            noise_sigma: 0.05,
            crop_scale_min: 0.8,
        }
    }

    /// Jitter and noise only; keeps pixels aligned with their masks.
    pub fn photometric(&self) -> Self {
        Self {
            flip_prob: 0.0,
            crop_scale_min: 1.0,
            ..self.clone()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob == 0.0 && self.color_jitter == 0.0 && self.noise_sigma == 0.0 && self.crop_scale_min >= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob)
            || self.color_jitter < 0.0
            || self.noise_sigma < 0.0
            || !(self.crop_scale_min > 0.0 && self.crop_scale_min <= 1.0)
        {
            return invalid(format!("invalid augmentation spec {self:?}"));
        }
        Ok(())
    }

    /// Augments `frames` laid out `[k, H, W, C]`, returning a new buffer.
    pub fn apply(&self, frames: &[f32], shape: [usize; 4], rng: &mut SslRng) -> Vec<f32> {
        if self.is_identity() {
            return frames.to_vec();
        }
        let [k, h, w, c] = shape;
        let flip = self.flip_prob > 0.0 && rng.random::<f64>() < self.flip_prob;
        let gains: Vec<f64> = (0..c)
            .map(|_| {
                if self.color_jitter > 0.0 {
                    1.0 + rng.random_range(-self.color_jitter..=self.color_jitter)
                } else {
                    1.0
                }
            })
            .collect();
        let (crop_h, crop_w, y0, x0) = if self.crop_scale_min < 1.0 {
            let s = rng.random_range(self.crop_scale_min..=1.0);
            let ch = ((h as f64 * s).round() as usize).clamp(1, h);
            let cw = ((w as f64 * s).round() as usize).clamp(1, w);
            (ch, cw, rng.random_range(0..=h - ch), rng.random_range(0..=w - cw))
        } else {
            (h, w, 0, 0)
        };
        let noise = (self.noise_sigma > 0.0).then(|| Normal::new(0.0, self.noise_sigma).unwrap());
        let mut out = vec![0.0f32; frames.len()];
        for t in 0..k {
            for y in 0..h {
                // nearest-neighbour resize of the crop back to full size
                let sy = y0 + y * crop_h / h;
                for x in 0..w {
                    let sx_unflipped = x0 + x * crop_w / w;
                    let sx = if flip { x0 + (crop_w - 1) - (sx_unflipped - x0) } else { sx_unflipped };
                    for ch in 0..c {
                        let src = frames[((t * h + sy) * w + sx) * c + ch] as f64;
                        let mut v = src * gains[ch];
                        if let Some(n) = &noise {
                            v += n.sample(rng);
                        }
                        out[((t * h + y) * w + x) * c + ch] = v.clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
        out
    }
}
