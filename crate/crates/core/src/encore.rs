//! ENCORE pseudo-mask selection for semi-supervised segmentation.
//!
//! Class-aware calibration (CAC) turns per-class true-positive confidences on
//! labeled frames into thresholds; adaptive thresholding (ACT) scores a grid
//! of candidate profiles by the Dice of their pseudo-masks on a held-out
//! labeled split and adopts the best. Candidate grids come from a
//! [`ThresholdPolicy`] chosen by name.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::autodiff::Graph;
use crate::data::SegFrame;
use crate::error::{invalid, Result};
use crate::metrics::{foreground_dice, percentile};
use crate::models::train::{clip_grad_norm, Adam};
use crate::models::{SegModelSpec, SegmentationNet};
use crate::rng::{derive_named, derive_seed, seeded};
use crate::types::SegPrediction;

pub const IGNORE: usize = 255;
/// Thresholds are kept strictly inside `(0, 1)`.
const THRESHOLD_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Cac,
    Act,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub per_class_threshold: Vec<f64>,
    pub source: ProfileSource,
    pub percentile_q: Option<f64>,
    pub candidate_grid: Option<Vec<f64>>,
}

impl ThresholdProfile {
    pub fn fixed(num_classes: usize, threshold: f64) -> Result<Self> {
        let p = Self {
            per_class_threshold: vec![threshold; num_classes],
            source: ProfileSource::Fixed,
            percentile_q: None,
            candidate_grid: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class_threshold.is_empty() {
            return invalid("threshold profile has no classes");
        }
        if let Some(t) = self.per_class_threshold.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return invalid(format!("threshold {t} outside (0, 1)"));
        }
        Ok(())
    }

    pub fn mean_threshold(&self) -> f64 {
        self.per_class_threshold.iter().sum::<f64>() / self.per_class_threshold.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoMask {
    /// `[H, W]` class ids, or [`IGNORE`].
    pub mask: Vec<usize>,
    pub source_frame_id: String,
    pub accepted_pixel_fraction: f64,
}

impl PseudoMask {
    /// The mask as bytes for PGM export; [`IGNORE`] stays 255.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.mask.iter().map(|&c| c.min(IGNORE) as u8).collect()
    }
}

/// Per class, the predicted probabilities of pixels where prediction and
/// ground truth both equal that class.
pub fn collect_tp_confidences(seg_preds: &[SegPrediction], gt_masks: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
    if seg_preds.len() != gt_masks.len() {
        return invalid(format!("{} predictions for {} masks", seg_preds.len(), gt_masks.len()));
    }
    let num_classes = seg_preds.first().map_or(0, |p| p.num_classes);
    let mut out = vec![Vec::new(); num_classes];
    for (pred, gt) in seg_preds.iter().zip(gt_masks) {
        if pred.num_classes != num_classes {
            return invalid("predictions disagree on the number of classes");
        }
        if gt.len() != pred.num_pixels() {
            return invalid(format!("mask of {} pixels for a {}x{} prediction", gt.len(), pred.height, pred.width));
        }
        for (px, (&p, &g)) in pred.argmax_mask.iter().zip(gt.iter()).enumerate() {
            if p == g {
                out[p].push(pred.prob(p, px));
            }
        }
    }
    Ok(out)
}

/// Per-class percentile `q` of true-positive confidences, `t0` for classes
/// without any, clamped strictly inside `(0, 1)`.
pub fn cac_thresholds(tp_confidences: &[Vec<f64>], q: f64, fallback: f64) -> Result<ThresholdProfile> {
    if !(0.0..=100.0).contains(&q) {
        return invalid(format!("percentile {q} outside [0, 100]"));
    }
    if !(fallback > 0.0 && fallback < 1.0) {
        return invalid(format!("fallback threshold {fallback} outside (0, 1)"));
    }
    let per_class_threshold = tp_confidences
        .iter()
        .map(|list| {
            let t = if list.is_empty() { fallback } else { percentile(list, q)? };
            Ok(t.clamp(THRESHOLD_EPS, 1.0 - THRESHOLD_EPS))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdProfile {
        per_class_threshold,
        source: ProfileSource::Cac,
        percentile_q: Some(q),
        candidate_grid: None,
    })
}

/// Keeps the argmax class where its probability reaches that class's
/// threshold; every other pixel becomes [`IGNORE`].
pub fn generate_pseudo_mask(seg_pred: &SegPrediction, profile: &ThresholdProfile, frame_id: &str) -> Result<PseudoMask> {
    if profile.per_class_threshold.len() != seg_pred.num_classes {
        return invalid(format!(
            "profile has {} thresholds for {} classes",
            profile.per_class_threshold.len(),
            seg_pred.num_classes
        ));
    }
    let mut accepted = 0usize;
    let mask: Vec<usize> = seg_pred
        .argmax_mask
        .iter()
        .enumerate()
        .map(|(px, &c)| {
            if seg_pred.prob(c, px) >= profile.per_class_threshold[c] {
                accepted += 1;
                c
            } else {
                IGNORE
            }
        })
        .collect();
    Ok(PseudoMask {
        accepted_pixel_fraction: accepted as f64 / mask.len().max(1) as f64,
        mask,
        source_frame_id: frame_id.to_string(),
    })
}

/// Mean over frames of mean foreground Dice; [`IGNORE`] pixels count as
/// predicting no foreground class.
pub fn mean_foreground_dice(masks: &[&[usize]], gts: &[&[usize]], num_classes: usize) -> Result<f64> {
    if masks.is_empty() || masks.len() != gts.len() {
        return invalid("need one ground truth per mask and at least one mask");
    }
    let mut total = 0.0;
    for (m, g) in masks.iter().zip(gts) {
        let d = foreground_dice(m, g, num_classes)?;
        total += d.iter().sum::<f64>() / d.len().max(1) as f64;
    }
    Ok(total / masks.len() as f64)
}

/// Index of the candidate with the highest mean foreground Dice (ties: lower
/// mean threshold, then lower index) and every candidate's Dice.
pub fn act_select(candidates: &[ThresholdProfile], val_preds: &[SegPrediction], val_gts: &[&[usize]]) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return invalid("ACT needs at least one candidate profile");
    }
    if val_preds.is_empty() {
        return invalid("ACT needs a nonempty validation batch");
    }
    if val_preds.len() != val_gts.len() {
        return invalid("validation predictions and masks differ in count");
    }
    let num_classes = val_preds[0].num_classes;
    let dices = candidates
        .par_iter()
        .map(|profile| {
            let masks = val_preds
                .iter()
                .map(|p| generate_pseudo_mask(p, profile, "").map(|m| m.mask))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[usize]> = masks.iter().map(Vec::as_slice).collect();
            mean_foreground_dice(&refs, val_gts, num_classes)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = dices[i] > dices[best]
            || (dices[i] == dices[best] && candidates[i].mean_threshold() < candidates[best].mean_threshold());
        if better {
            best = i;
        }
    }
    Ok((best, dices))
}

/// A source of candidate threshold profiles for one recalibration.
pub trait ThresholdPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    fn candidates(&self, tp_confidences: &[Vec<f64>], config: &ThresholdGrid) -> Result<Vec<ThresholdProfile>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdGrid {
    /// CAC percentiles.
    pub percentiles: Vec<f64>,
    /// Offsets added to every CAC profile, as extra candidates.
    pub offsets: Vec<f64>,
    /// Uniform fixed thresholds included by the adaptive policy.
    pub fixed: Vec<f64>,
    /// Threshold of the fixed policy.
    pub fixed_threshold: f64,
    /// CAC threshold for a class without true positives.
    pub fallback: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            percentiles: vec![10.0, 25.0, 50.0],
            offsets: Vec::new(),
            fixed: vec![0.5, 0.7, 0.9],
            fixed_threshold: 0.9,
            fallback: 0.5,
        }
    }
}

/// CAC profiles over the percentile grid, their offsets, then fixed profiles.
pub struct AdaptivePolicy;

impl ThresholdPolicy for AdaptivePolicy {
    fn name(&self) -> &'static str {
        "adaptive"
    }

    fn candidates(&self, tp: &[Vec<f64>], grid: &ThresholdGrid) -> Result<Vec<ThresholdProfile>> {
        let mut out = Vec::new();
        for &q in &grid.percentiles {
            let base = cac_thresholds(tp, q, grid.fallback)?;
            for &d in &grid.offsets {
                let mut shifted = base.clone();
                for t in &mut shifted.per_class_threshold {
                    *t = (*t + d).clamp(THRESHOLD_EPS, 1.0 - THRESHOLD_EPS);
                }
                out.push(shifted);
            }
            out.push(base);
        }
        for &t in &grid.fixed {
            out.push(ThresholdProfile::fixed(tp.len(), t)?);
        }
        Ok(out)
    }
}

/// A single uniform threshold.
pub struct FixedPolicy;

impl ThresholdPolicy for FixedPolicy {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn candidates(&self, tp: &[Vec<f64>], grid: &ThresholdGrid) -> Result<Vec<ThresholdProfile>> {
        Ok(vec![ThresholdProfile::fixed(tp.len(), grid.fixed_threshold)?])
    }
}

pub struct PolicyEntry {
    pub name: &'static str,
    pub build: fn() -> Box<dyn ThresholdPolicy>,
}

pub static POLICIES: &[PolicyEntry] = &[
    PolicyEntry {
        name: "adaptive",
        build: || Box::new(AdaptivePolicy),
    },
    PolicyEntry {
        name: "fixed",
        build: || Box::new(FixedPolicy),
    },
];

pub fn policy_by_name(name: &str) -> Result<Box<dyn ThresholdPolicy>> {
    match POLICIES.iter().find(|p| p.name == name) {
        Some(p) => Ok((p.build)()),
        None => {
            let known: Vec<&str> = POLICIES.iter().map(|p| p.name).collect();
            invalid(format!("unknown threshold policy `{name}` (known: {})", known.join(", ")))
        }
    }
}

/// Whether raising any single class threshold of any candidate never raises
/// the accepted pixel fraction on `preds`.
pub fn check_monotonicity(candidates: &[ThresholdProfile], preds: &[SegPrediction], bump: f64) -> Result<bool> {
    for profile in candidates {
        for c in 0..profile.per_class_threshold.len() {
            let mut raised = profile.clone();
            raised.per_class_threshold[c] = (raised.per_class_threshold[c] + bump).min(1.0 - THRESHOLD_EPS);
            for p in preds {
                let before = generate_pseudo_mask(p, profile, "")?.accepted_pixel_fraction;
                let after = generate_pseudo_mask(p, &raised, "")?.accepted_pixel_fraction;
                if after > before {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub dice_weight: f64,
    pub unlabeled_weight: f64,
    /// Applied per frame; geometric parts are dropped to keep masks aligned.
    pub augmentation: AugmentationSpec,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 3e-3,
            batch_size: 4,
            max_grad_norm: 5.0,
            dice_weight: 1.0,
            unlabeled_weight: 1.0,
            augmentation: AugmentationSpec::strong().photometric(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoreConfig {
    pub train: SegTrainConfig,
    pub policy: String,
    pub grid: ThresholdGrid,
    pub recalibration_period: usize,
    /// Fraction of labeled frames held out to score candidates.
    pub assessor_fraction: f64,
}

impl Default for EncoreConfig {
    fn default() -> Self {
        Self {
            train: SegTrainConfig::default(),
            policy: "adaptive".into(),
            grid: ThresholdGrid::default(),
            recalibration_period: 5,
            assessor_fraction: 0.34,
        }
    }
}

impl EncoreConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || self.recalibration_period == 0 {
            return invalid("epochs, batch_size and recalibration_period must be >= 1");
        }
        if !(t.learning_rate > 0.0) || t.dice_weight < 0.0 || t.unlabeled_weight < 0.0 {
            return invalid("learning_rate must be positive and loss weights >= 0");
        }
        if !(0.0..1.0).contains(&self.assessor_fraction) {
            return invalid("assessor_fraction must lie in [0, 1)");
        }
        t.augmentation.validate()?;
        policy_by_name(&self.policy)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub thresholds: Vec<f64>,
    pub mean_dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationReport {
    pub epoch: usize,
    pub candidates: Vec<CandidateScore>,
    pub adopted_index: usize,
    pub monotone: bool,
}

pub struct EncoreOutcome {
    pub model: SegmentationNet,
    pub profile: Option<ThresholdProfile>,
    pub recalibrations: Vec<RecalibrationReport>,
}

fn stack(frames: &[&SegFrame], channels: usize) -> Result<(Vec<f32>, [usize; 4])> {
    let first = frames.first().ok_or_else(|| crate::Error::InvalidInput("empty frame batch".into()))?;
    let (h, w) = (first.height, first.width);
    if frames.iter().any(|f| f.height != h || f.width != w) {
        return invalid("frames in a batch must share one size");
    }
    let mut data = Vec::with_capacity(frames.len() * h * w * channels);
    for f in frames {
        data.extend_from_slice(&f.pixels);
    }
    Ok((data, [frames.len(), h, w, channels]))
}

/// Predictions for `frames`, batched.
pub fn predict_frames(model: &SegmentationNet, frames: &[&SegFrame]) -> Result<Vec<SegPrediction>> {
    let c = model.spec().in_channels;
    frames
        .par_chunks(8)
        .map(|chunk| {
            let (data, shape) = stack(chunk, c)?;
            model.forward_batch(&data, shape)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// Mean foreground Dice of argmax predictions on `frames`.
pub fn evaluate_segmentation(model: &SegmentationNet, frames: &[&SegFrame]) -> Result<f64> {
    let preds = predict_frames(model, frames)?;
    let masks: Vec<&[usize]> = preds.iter().map(|p| p.argmax_mask.as_slice()).collect();
    let gts: Vec<&[usize]> = frames.iter().map(|f| f.mask.as_slice()).collect();
    mean_foreground_dice(&masks, &gts, model.spec().num_classes)
}

/// Accumulates the gradient of `CE + dice_weight·softDice` over one batch.
fn seg_batch_grad(
    model: &SegmentationNet,
    frames: &[f32],
    shape: [usize; 4],
    targets: &[usize],
    dice_weight: f64,
    scale: f64,
    grads: &mut [f64],
) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let logits = model.forward_graph(&mut g, &p, frames, shape)?;
    let mut loss = g.pixel_cross_entropy(logits, targets, IGNORE);
    if dice_weight > 0.0 {
        let d = g.soft_dice(logits, targets, IGNORE);
        let d = g.scale(d, dice_weight);
        loss = g.add(loss, d);
    }
    let value = g.scalar(loss);
    let gr = g.backward(loss);
    model.params().gather_into(&p, &gr, scale, grads);
    Ok(value)
}

/// Trains a segmentation net on labeled frames plus, after the first
/// recalibration, thresholded pseudo-masks of unlabeled frames, which are
/// regenerated every epoch with the adopted profile.
pub fn train_encore(
    spec: &SegModelSpec,
    labeled: &[&SegFrame],
    unlabeled: &[&SegFrame],
    config: &EncoreConfig,
    seed: u64,
) -> Result<EncoreOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return invalid("ENCORE needs at least one labeled frame");
    }
    let policy = policy_by_name(&config.policy)?;
    let tc = &config.train;
    let channels = spec.in_channels;
    let mut model = SegmentationNet::new(spec, seed)?;
    let mut adam = Adam::new(model.params().len(), tc.learning_rate);

    // Held-out assessor frames score candidates; the rest calibrate them.
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut seeded(derive_named(seed, "encore.assessor")));
    let n_assess = if labeled.len() < 2 {
        0
    } else {
        ((config.assessor_fraction * labeled.len() as f64).round() as usize).clamp(1, labeled.len() - 1)
    };
    let assessor: Vec<&SegFrame> = order[..n_assess].iter().map(|&i| labeled[i]).collect();
    let calib: Vec<&SegFrame> = order[n_assess..].iter().map(|&i| labeled[i]).collect();
    let assessor = if assessor.is_empty() { calib.clone() } else { assessor };

    let stream = derive_named(seed, "encore.train");
    let mut profile: Option<ThresholdProfile> = None;
    let mut reports = Vec::new();
    let mut lab_order: Vec<usize> = (0..labeled.len()).collect();
    let mut unl_order: Vec<usize> = (0..unlabeled.len()).collect();
    for epoch in 1..=tc.epochs {
        let mut rng = seeded(derive_seed(stream, epoch as u64));
        lab_order.shuffle(&mut rng);
        let pseudo = match (&profile, unlabeled.is_empty()) {
            (Some(prof), false) => {
                let preds = predict_frames(&model, unlabeled)?;
                let masks = preds
                    .iter()
                    .zip(unlabeled)
                    .map(|(p, f)| generate_pseudo_mask(p, prof, &f.frame_id))
                    .collect::<Result<Vec<_>>>()?;
                unl_order.shuffle(&mut rng);
                Some(masks)
            }
            _ => None,
        };
        let mut unl_cursor = 0;
        for batch in lab_order.chunks(tc.batch_size) {
            let mut grads = vec![0.0; model.params().len()];
            let frames: Vec<&SegFrame> = batch.iter().map(|&i| labeled[i]).collect();
            let (mut data, shape) = stack(&frames, channels)?;
            augment_frames(&tc.augmentation, &mut data, shape, &mut rng);
            let targets: Vec<usize> = frames.iter().flat_map(|f| f.mask.iter().copied()).collect();
            seg_batch_grad(&model, &data, shape, &targets, tc.dice_weight, 1.0, &mut grads)?;
            if let Some(masks) = &pseudo {
                if tc.unlabeled_weight > 0.0 {
                    let idx: Vec<usize> = (0..tc.batch_size.min(unlabeled.len()))
                        .map(|j| unl_order[(unl_cursor + j) % unlabeled.len()])
                        .collect();
                    unl_cursor += idx.len();
                    let frames: Vec<&SegFrame> = idx.iter().map(|&i| unlabeled[i]).collect();
                    let (mut data, shape) = stack(&frames, channels)?;
                    augment_frames(&tc.augmentation, &mut data, shape, &mut rng);
                    let targets: Vec<usize> = idx.iter().flat_map(|&i| masks[i].mask.iter().copied()).collect();
                    if targets.iter().any(|&t| t != IGNORE) {
                        seg_batch_grad(&model, &data, shape, &targets, 0.0, tc.unlabeled_weight, &mut grads)?;
                    }
                }
            }
            clip_grad_norm(&mut grads, tc.max_grad_norm);
            let mut values = model.params().values().to_vec();
            adam.step(&mut values, &grads);
            model.params_mut().set_values(&values);
        }
        if epoch % config.recalibration_period == 0 {
            let calib_preds = predict_frames(&model, &calib)?;
            let calib_gts: Vec<&[usize]> = calib.iter().map(|f| f.mask.as_slice()).collect();
            let tp = collect_tp_confidences(&calib_preds, &calib_gts)?;
            let candidates = policy.candidates(&tp, &config.grid)?;
            let val_preds = predict_frames(&model, &assessor)?;
            let val_gts: Vec<&[usize]> = assessor.iter().map(|f| f.mask.as_slice()).collect();
            let (best, dices) = act_select(&candidates, &val_preds, &val_gts)?;
            reports.push(RecalibrationReport {
                epoch,
                candidates: candidates
                    .iter()
                    .zip(&dices)
                    .map(|(c, &d)| CandidateScore {
                        thresholds: c.per_class_threshold.clone(),
                        mean_dice: d,
                    })
                    .collect(),
                adopted_index: best,
                monotone: check_monotonicity(&candidates, &val_preds, 0.05)?,
            });
            let mut adopted = candidates[best].clone();
            if candidates.len() > 1 {
                adopted.source = ProfileSource::Act;
                adopted.candidate_grid = Some(config.grid.percentiles.clone());
            }
            profile = Some(adopted);
        }
    }
    Ok(EncoreOutcome {
        model,
        profile,
        recalibrations: reports,
    })
}

/// Augments each frame of a `[N, H, W, C]` batch independently.
fn augment_frames(aug: &AugmentationSpec, data: &mut [f32], shape: [usize; 4], rng: &mut crate::rng::SslRng) {
    if aug.is_identity() {
        return;
    }
    let [n, h, w, c] = shape;
    let per = h * w * c;
    for i in 0..n {
        let out = aug.apply(&data[i * per..(i + 1) * per], [1, h, w, c], rng);
        data[i * per..(i + 1) * per].copy_from_slice(&out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(probs_hwc: &[f64], h: usize, w: usize, k: usize) -> SegPrediction {
        SegPrediction::from_hwc(probs_hwc, h, w, k).unwrap()
    }

    #[test]
    fn tp_bookkeeping() {
        // Pixel A: predicted 1 at 0.7, truly 1. Pixel B: predicted 1 at 0.8, truly 0.
        let p = pred(&[0.3, 0.7, 0.2, 0.8], 2, 1, 2);
        let tp = collect_tp_confidences(&[p.clone()], &[&[1, 0]]).unwrap();
        assert_eq!(tp[1], vec![0.7]);
        assert!(tp[0].is_empty());
        assert!(collect_tp_confidences(&[p], &[&[1]]).is_err());
        let perfect = pred(&[0.9, 0.1, 0.9, 0.1, 0.9, 0.1], 3, 1, 2);
        assert_eq!(collect_tp_confidences(&[perfect], &[&[0, 0, 0]]).unwrap()[0], vec![0.9; 3]);
    }

    #[test]
    fn cac_worked_values() {
        let prof = cac_thresholds(&[vec![0.5, 0.7, 0.9], vec![0.8; 5], vec![]], 25.0, 0.5).unwrap();
        assert!((prof.per_class_threshold[0] - 0.6).abs() < 1e-15);
        assert_eq!(prof.per_class_threshold[1], 0.8);
        assert_eq!(prof.per_class_threshold[2], 0.5);
        assert!(cac_thresholds(&[vec![0.5]], 101.0, 0.5).is_err());
    }

    #[test]
    fn pseudo_mask_examples() {
        let p = pred(&[0.9, 0.1, 0.4, 0.6], 1, 2, 2);
        let m = generate_pseudo_mask(&p, &ThresholdProfile::fixed(2, 0.7).unwrap(), "f").unwrap();
        assert_eq!(m.mask, vec![0, IGNORE]);
        assert_eq!(m.accepted_pixel_fraction, 0.5);
        let none = generate_pseudo_mask(&p, &ThresholdProfile::fixed(2, 0.95).unwrap(), "f").unwrap();
        assert_eq!(none.accepted_pixel_fraction, 0.0);
        assert_eq!(none.to_bytes(), vec![255, 255]);
        let sure = pred(&[1.0, 0.0, 0.0, 1.0], 1, 2, 2);
        let all = generate_pseudo_mask(&sure, &ThresholdProfile::fixed(2, 0.99).unwrap(), "f").unwrap();
        assert_eq!(all.accepted_pixel_fraction, 1.0);
    }

    #[test]
    fn act_picks_best_then_lowest_threshold() {
        // One image, 4 pixels, gt = [1, 1, 0, 0]; class-1 confidences 0.95, 0.6, 0.55, 0.52.
        let p = pred(&[0.05, 0.95, 0.4, 0.6, 0.45, 0.55, 0.48, 0.52], 1, 4, 2);
        let gt: &[usize] = &[1, 1, 0, 0];
        let c = |t: f64| ThresholdProfile::fixed(2, t).unwrap();
        let (best, dice) = act_select(&[c(0.5), c(0.58), c(0.9)], &[p.clone()], &[gt]).unwrap();
        assert_eq!(best, 1);
        assert!((dice[1] - 1.0).abs() < 1e-12);
        let (best, _) = act_select(&[c(0.7), c(0.9)], &[p.clone()], &[gt]).unwrap();
        assert_eq!(best, 0, "equal Dice resolves to the lower mean threshold");
        assert_eq!(act_select(&[c(0.7)], &[p.clone()], &[gt]).unwrap().0, 0);
        assert!(act_select(&[], &[p], &[gt]).is_err());
    }

    #[test]
    fn policies_resolve_by_name() {
        let tp = vec![vec![0.9, 0.95], vec![0.6, 0.8]];
        let grid = ThresholdGrid::default();
        assert_eq!(policy_by_name("adaptive").unwrap().candidates(&tp, &grid).unwrap().len(), 6);
        let fixed = policy_by_name("fixed").unwrap().candidates(&tp, &grid).unwrap();
        assert_eq!(fixed[0].per_class_threshold, vec![0.9, 0.9]);
        assert!(policy_by_name("otsu").err().unwrap().to_string().contains("adaptive"));
    }
}
