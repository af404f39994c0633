//! Synthetic segmentation frames: elongated instruments and blob-shaped
//! anatomy over a textured background, with exact masks.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, seeded, SslRng};

pub const BACKGROUND: usize = 0;
pub const INSTRUMENT: usize = 1;
pub const ANATOMY: usize = 2;
pub const SEG_CLASSES: usize = 3;
pub const SEG_CHANNELS: usize = 3;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSegSpec {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of instruments per image.
    pub instruments: [usize; 2],
    /// Inclusive range of anatomy blobs per image.
    pub anatomy: [usize; 2],
    /// Allowed instrument area as a fraction of the frame, inclusive.
    pub instrument_area: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSegSpec {
    fn default() -> Self {
        Self {
            num_images: 64,
            height: 32,
            width: 32,
            instruments: [1, 3],
            anatomy: [0, 2],
            instrument_area: [0.03, 0.35],
            noise_sigma: 0.08,
            seed: 11,
        }
    }
}

impl SyntheticSegSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.num_images, self.height, self.width].contains(&0) {
            return invalid("segmentation dims must be >= 1");
        }
        if self.instruments[0] < 1 || self.instruments[0] > self.instruments[1] {
            return invalid("instrument count range must satisfy 1 <= min <= max");
        }
        if self.anatomy[0] > self.anatomy[1] {
            return invalid("anatomy count range must satisfy min <= max");
        }
        let [lo, hi] = self.instrument_area;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return invalid("instrument_area must be an ordered range inside [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid("noise_sigma must be >= 0");
        }
        Ok(())
    }

    pub fn image_id(index: usize) -> String {
        format!("frame_{index:05}")
    }

    /// Instrument pixel count bounds implied by `instrument_area`.
    pub fn instrument_pixel_range(&self) -> (usize, usize) {
        let n = (self.height * self.width) as f64;
        (
            (self.instrument_area[0] * n).ceil() as usize,
            (self.instrument_area[1] * n).floor() as usize,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegFrame {
    pub frame_id: String,
    pub height: usize,
    pub width: usize,
    /// `[H, W, 3]` values in `[0, 1]`.
    pub pixels: Vec<f32>,
    /// `[H, W]` class ids.
    pub mask: Vec<usize>,
}

struct Capsule {
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    half_width: f64,
}

impl Capsule {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (self.bx - self.ax, self.by - self.ay);
        let len2 = dx * dx + dy * dy;
        let t = (((x - self.ax) * dx + (y - self.ay) * dy) / len2).clamp(0.0, 1.0);
        let (px, py) = (self.ax + t * dx, self.ay + t * dy);
        (x - px).powi(2) + (y - py).powi(2) <= self.half_width.powi(2)
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }
}

fn draw_instrument(rng: &mut SslRng) -> Capsule {
    // Enters from a random border point and reaches into the frame.
    let side = rng.random_range(0..4);
    let along = rng.random_range(0.1..0.9);
    let (ax, ay) = match side {
        0 => (along, 0.0),
        1 => (1.0, along),
        2 => (along, 1.0),
        _ => (0.0, along),
    };
    let inward = [PI / 2.0, PI, -PI / 2.0, 0.0][side];
    let angle = inward + rng.random_range(-0.6..0.6);
    let length = rng.random_range(0.35..0.75);
    Capsule {
        ax,
        ay,
        bx: ax + length * angle.cos(),
        by: ay + length * angle.sin(),
        half_width: rng.random_range(0.035..0.07),
    }
}

fn draw_anatomy(rng: &mut SslRng) -> Ellipse {
    Ellipse {
        cx: rng.random_range(0.2..0.8),
        cy: rng.random_range(0.2..0.8),
        rx: rng.random_range(0.1..0.22),
        ry: rng.random_range(0.08..0.18),
        angle: rng.random_range(0.0..PI),
    }
}

fn render_mask(spec: &SyntheticSegSpec, rng: &mut SslRng) -> Vec<usize> {
    let n_anat = rng.random_range(spec.anatomy[0]..=spec.anatomy[1]);
    let n_inst = rng.random_range(spec.instruments[0]..=spec.instruments[1]);
    let blobs: Vec<Ellipse> = (0..n_anat).map(|_| draw_anatomy(rng)).collect();
    let tools: Vec<Capsule> = (0..n_inst).map(|_| draw_instrument(rng)).collect();
    let (h, w) = (spec.height, spec.width);
    let mut mask = vec![BACKGROUND; h * w];
    for y in 0..h {
        let yn = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let xn = (x as f64 + 0.5) / w as f64;
            let m = &mut mask[y * w + x];
            if blobs.iter().any(|b| b.contains(xn, yn)) {
                *m = ANATOMY;
            }
            if tools.iter().any(|t| t.contains(xn, yn)) {
                *m = INSTRUMENT;
            }
        }
    }
    mask
}

/// Image `index` of the dataset.
pub fn generate_seg_frame(spec: &SyntheticSegSpec, index: usize) -> Result<SegFrame> {
    let mut rng = seeded(derive_seed(spec.seed, index as u64));
    let (lo, hi) = spec.instrument_pixel_range();
    let mut mask = None;
    for _ in 0..MAX_ATTEMPTS {
        let m = render_mask(spec, &mut rng);
        let area = m.iter().filter(|&&c| c == INSTRUMENT).count();
        if (lo..=hi).contains(&area) {
            mask = Some(m);
            break;
        }
    }
    let Some(mask) = mask else {
        return invalid(format!(
            "could not place instruments within {lo}..={hi} pixels after {MAX_ATTEMPTS} attempts"
        ));
    };
    let (h, w) = (spec.height, spec.width);
    let jitter = |rng: &mut SslRng, base: [f64; 3], amp: f64| base.map(|b| b + rng.random_range(-amp..amp));
    let background = jitter(&mut rng, [0.55, 0.38, 0.36], 0.06);
    let anatomy = jitter(&mut rng, [0.72, 0.32, 0.3], 0.08);
    let metal = jitter(&mut rng, [0.72, 0.72, 0.74], 0.1);
    let tex_angle = rng.random_range(0.0..PI);
    let tex_phase = rng.random_range(0.0..1.0);
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
    let mut pixels = Vec::with_capacity(h * w * SEG_CHANNELS);
    for y in 0..h {
        let yn = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let xn = (x as f64 + 0.5) / w as f64;
            let tex = 0.06 * (2.0 * PI * (4.0 * (xn * tex_angle.cos() + yn * tex_angle.sin()) + tex_phase)).sin();
            let (color, shade) = match mask[y * w + x] {
                INSTRUMENT => (metal, 0.1 * (xn - 0.5)),
                ANATOMY => (anatomy, tex * 0.5),
                _ => (background, tex),
            };
            for c in color {
                let noise = if spec.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                pixels.push((c + shade + noise).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(SegFrame {
        frame_id: SyntheticSegSpec::image_id(index),
        height: h,
        width: w,
        pixels,
        mask,
    })
}

pub fn generate_seg_dataset(spec: &SyntheticSegSpec) -> Result<Vec<SegFrame>> {
    spec.validate()?;
    (0..spec.num_images).map(|i| generate_seg_frame(spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSegSpec {
        SyntheticSegSpec {
            num_images: 12,
            height: 16,
            width: 16,
            ..SyntheticSegSpec::default()
        }
    }

    #[test]
    fn masks_use_declared_classes_and_area_range() {
        let s = spec();
        let (lo, hi) = s.instrument_pixel_range();
        for f in generate_seg_dataset(&s).unwrap() {
            assert!(f.mask.iter().all(|&c| c < SEG_CLASSES));
            let area = f.mask.iter().filter(|&&c| c == INSTRUMENT).count();
            assert!((lo..=hi).contains(&area), "{} has {area} instrument pixels", f.frame_id);
            assert_eq!(f.pixels.len(), 16 * 16 * 3);
            assert!(f.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn same_seed_same_frames() {
        assert_eq!(generate_seg_dataset(&spec()).unwrap(), generate_seg_dataset(&spec()).unwrap());
    }

    #[test]
    fn shape_membership() {
        let c = Capsule {
            ax: 0.0,
            ay: 0.5,
            bx: 1.0,
            by: 0.5,
            half_width: 0.1,
        };
        assert!(c.contains(0.5, 0.55));
        assert!(!c.contains(0.5, 0.7));
        let e = Ellipse {
            cx: 0.5,
            cy: 0.5,
            rx: 0.2,
            ry: 0.1,
            angle: 0.0,
        };
        assert!(e.contains(0.65, 0.5));
        assert!(!e.contains(0.5, 0.65));
    }

    #[test]
    fn infeasible_area_range_errors() {
        let s = SyntheticSegSpec {
            instrument_area: [0.99, 1.0],
            ..spec()
        };
        assert!(generate_seg_dataset(&s).is_err());
        assert!(SyntheticSegSpec { instruments: [0, 1], ..spec() }.validate().is_err());
    }
}
