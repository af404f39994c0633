//! Domain types shared by every framework.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::prob::argmax_class;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return invalid(format!("label space needs at least 2 classes, got {}", names.len()));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return invalid("class names must be unique");
        }
        Ok(Self { names })
    }

    /// `class_0 .. class_{n-1}`.
    pub fn numbered(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|c| format!("class_{c}")).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Frame stack `[T, H, W, C]`, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: Vec<f32>,
    pub shape: [usize; 4],
    pub label: Option<usize>,
}

impl VideoClip {
    pub fn new(clip_id: impl Into<String>, shape: [usize; 4], frames: Vec<f32>, label: Option<usize>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return invalid(format!("clip dims must be >= 1, got {shape:?}"));
        }
        if shape.iter().product::<usize>() != frames.len() {
            return invalid("clip frame buffer does not match its shape");
        }
        if frames.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return invalid("clip frame values must be finite and in [0, 1]");
        }
        Ok(Self {
            clip_id: clip_id.into(),
            frames,
            shape,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn frame_size(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_size();
        &self.frames[t * n..(t + 1) * n]
    }

    /// Gathers the frames at `indices` into a view.
    pub fn view(&self, indices: &[usize]) -> Result<FrameView> {
        if indices.is_empty() {
            return invalid("a frame view needs at least one index");
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("frame indices must be strictly increasing");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("frame index {bad} out of range for clip of length {}", self.len()));
        }
        let mut frames = Vec::with_capacity(indices.len() * self.frame_size());
        for &i in indices {
            frames.extend_from_slice(self.frame(i));
        }
        Ok(FrameView {
            clip_id: self.clip_id.clone(),
            frame_indices: indices.to_vec(),
            frames,
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameView {
    pub clip_id: String,
    pub frame_indices: Vec<usize>,
    pub frames: Vec<f32>,
    pub shape: [usize; 4],
}

impl FrameView {
    pub fn num_frames(&self) -> usize {
        self.shape[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted_class: usize,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("probabilities must be finite and nonnegative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return invalid(format!("probabilities sum to {total}, expected 1"));
        }
        let predicted_class = argmax_class(&probs)?;
        Ok(Self {
            confidence: probs[predicted_class],
            predicted_class,
            probs,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Per-pixel class probabilities `[C, H, W]` and their argmax mask `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegPrediction {
    pub probs: Vec<f64>,
    pub argmax_mask: Vec<usize>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
}

impl SegPrediction {
    /// Builds from channel-last probabilities `[H, W, C]`.
    pub fn from_hwc(probs_hwc: &[f64], height: usize, width: usize, num_classes: usize) -> Result<Self> {
        if probs_hwc.len() != height * width * num_classes {
            return invalid("segmentation probability buffer has the wrong size");
        }
        let plane = height * width;
        let mut probs = vec![0.0; probs_hwc.len()];
        let mut argmax_mask = Vec::with_capacity(plane);
        for (px, row) in probs_hwc.chunks(num_classes).enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return invalid(format!("pixel {px} probabilities do not form a distribution"));
            }
            for (c, &p) in row.iter().enumerate() {
                probs[c * plane + px] = p;
            }
            argmax_mask.push(argmax_class(row)?);
        }
        Ok(Self {
            probs,
            argmax_mask,
            num_classes,
            height,
            width,
        })
    }

    pub fn prob(&self, class: usize, pixel: usize) -> f64 {
        self.probs[class * self.height * self.width + pixel]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub dice: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_space_rejects_degenerate_inputs() {
        assert!(LabelSpace::new(vec!["a".into()]).is_err());
        assert!(LabelSpace::new(vec!["a".into(), "a".into()]).is_err());
        assert_eq!(LabelSpace::numbered(3).unwrap().num_classes(), 3);
    }

    #[test]
    fn clip_validates_values_and_views_indices() {
        assert!(VideoClip::new("c", [1, 1, 1, 1], vec![1.5], None).is_err());
        assert!(VideoClip::new("c", [0, 1, 1, 1], vec![], None).is_err());
        let clip = VideoClip::new("c", [3, 1, 1, 1], vec![0.0, 0.5, 1.0], Some(1)).unwrap();
        let view = clip.view(&[0, 2]).unwrap();
        assert_eq!(view.frames, vec![0.0, 1.0]);
        assert!(clip.view(&[2, 0]).is_err());
        assert!(clip.view(&[3]).is_err());
    }

    #[test]
    fn prediction_uses_lowest_index_on_ties() {
        let p = Prediction::from_probs(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(p.predicted_class, 0);
        assert_eq!(p.confidence, 0.4);
        assert!(Prediction::from_probs(vec![0.4, 0.4]).is_err());
    }

    #[test]
    fn seg_prediction_transposes_to_class_planes() {
        let probs = [0.7, 0.3, 0.2, 0.8];
        let seg = SegPrediction::from_hwc(&probs, 1, 2, 2).unwrap();
        assert_eq!(seg.argmax_mask, vec![0, 1]);
        assert_eq!(seg.prob(1, 0), 0.3);
        assert_eq!(seg.prob(0, 1), 0.2);
    }
}
