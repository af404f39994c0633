//! Supervised training loop for clip classifiers.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::metrics::classification_metrics;
use crate::models::checkpoint::{save_checkpoint, Checkpoint, FractionTag};
use crate::models::clip::{ClipClassifier, ClipModelSpec};
use crate::rng::{derive_named, derive_seed, seeded, SslRng};
use crate::sampling::segment_random_sample;
use crate::types::{LabelSpace, MetricReport, VideoClip};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub augmentation: AugmentationSpec,
    /// Weight each example by `N / (K·n_c)` over the `K` classes present, so
    /// every class carries equal total weight. Exactly 1 on balanced sets.
    pub class_balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 3e-3,
            batch_size: 4,
            max_grad_norm: 5.0,
            augmentation: AugmentationSpec::identity(),
            class_balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return invalid("epochs and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        self.augmentation.validate()
    }
}

/// A clip paired with the label it is trained on (ground truth or pseudo-label).
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub clip: &'a VideoClip,
    pub label: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ClipClassifier,
    /// Mean cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
    /// Snapshots tagged third, two-thirds and final, in that order.
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, tag: FractionTag) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.fraction_tag == tag)
    }
}

/// Epochs `ceil(n/3)`, `ceil(2n/3)` and `n`.
pub fn checkpoint_epochs(epochs: usize) -> [(usize, FractionTag); 3] {
    [
        (epochs.div_ceil(3), FractionTag::Third),
        ((2 * epochs).div_ceil(3), FractionTag::TwoThirds),
        (epochs, FractionTag::Final),
    ]
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scales `grads` down to at most `max_norm` in L2.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

/// Extension points of the training loop used by the semi-supervised trainers.
/// Every default is a no-op, so the plain loop is [`NoHook`].
pub trait TrainingHook {
    /// Extra loss recorded on a labeled sample's graph, added to its weighted
    /// cross-entropy. `embedding` is the clip embedding `[1, D]`.
    fn labeled_loss(&mut self, _g: &mut Graph, _embedding: Var, _label: usize, _weight: f64) -> Result<Option<Var>> {
        Ok(None)
    }

    /// Adds gradients of unlabeled-data terms for the current step into `grads`.
    fn unlabeled_step(&mut self, _model: &ClipClassifier, _grads: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn after_update(&mut self, _model: &ClipClassifier) {}

    fn end_epoch(&mut self, _epoch: usize, _model: &ClipClassifier) -> Result<()> {
        Ok(())
    }
}

pub struct NoHook;

impl TrainingHook for NoHook {}

pub fn train_supervised(spec: &ClipModelSpec, examples: &[Example], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with_hook(spec, examples, config, seed, &mut NoHook)
}

/// Cross-entropy of one view and its gradient w.r.t. every parameter.
pub fn clip_loss_and_grad(model: &ClipClassifier, frames: &[f32], shape: [usize; 4], label: usize) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let out = model.forward_graph(&mut g, &p, frames, shape)?;
    let loss = g.cross_entropy_rows(out.logits, &[label], &[1.0]);
    let grads = g.backward(loss);
    Ok((g.scalar(loss), model.params().gather(&p, &grads)))
}

fn class_weights(examples: &[Example], num_classes: usize, balanced: bool) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for e in examples {
        counts[e.label] += 1;
    }
    let present = counts.iter().filter(|&&n| n > 0).count();
    counts
        .iter()
        .map(|&n| {
            if balanced && n > 0 {
                examples.len() as f64 / (present * n) as f64
            } else {
                1.0
            }
        })
        .collect()
}

/// Draws a temporally diverse training view of `clip`.
pub fn training_view(clip: &VideoClip, k: usize, aug: &AugmentationSpec, rng: &mut SslRng) -> Result<(Vec<f32>, [usize; 4])> {
    let idx = segment_random_sample(clip.len(), k, rng)?;
    let view = clip.view(&idx)?;
    let frames = aug.apply(&view.frames, view.shape, rng);
    Ok((frames, view.shape))
}

pub fn train_with_hook(
    spec: &ClipModelSpec,
    examples: &[Example],
    config: &TrainConfig,
    seed: u64,
    hook: &mut dyn TrainingHook,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return invalid("supervised training needs at least one labeled clip");
    }
    config.validate()?;
    if let Some(bad) = examples.iter().find(|e| e.label >= spec.num_classes) {
        return invalid(format!("label {} outside {} classes", bad.label, spec.num_classes));
    }
    let mut model = ClipClassifier::new(spec, seed)?;
    let mut adam = Adam::new(model.params().len(), config.learning_rate);
    let stream = derive_named(seed, "train");
    let marks = checkpoint_epochs(config.epochs);
    let mut checkpoints = Vec::with_capacity(3);
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let class_weight = class_weights(examples, spec.num_classes, config.class_balanced);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = seeded(derive_seed(stream, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; model.params().len()];
            for &i in batch {
                let ex = examples[i];
                let (frames, shape) = training_view(ex.clip, spec.frames_per_view, &config.augmentation, &mut rng)?;
                let mut g = Graph::new();
                let p = model.params().bind(&mut g);
                let out = model.forward_graph(&mut g, &p, &frames, shape)?;
                let ce = g.cross_entropy_rows(out.logits, &[ex.label], &[weight * class_weight[ex.label]]);
                epoch_loss += g.scalar(ce);
                let loss = match hook.labeled_loss(&mut g, out.embedding, ex.label, weight)? {
                    Some(extra) => g.add(ce, extra),
                    None => ce,
                };
                let gr = g.backward(loss);
                model.params().gather_into(&p, &gr, 1.0, &mut grads);
            }
            hook.unlabeled_step(&model, &mut grads)?;
            clip_grad_norm(&mut grads, config.max_grad_norm);
            let mut values = model.params().values().to_vec();
            adam.step(&mut values, &grads);
            model.params_mut().set_values(&values);
            hook.after_update(&model);
        }
        let batches = examples.len().div_ceil(config.batch_size);
        loss_curve.push(epoch_loss / batches as f64);
        for &(mark, tag) in &marks {
            if mark == epoch {
                let mut ckpt = save_checkpoint(&model, epoch as u64, tag);
                ckpt.rng_state = derive_seed(stream, epoch as u64 + 1).to_le_bytes().to_vec();
                checkpoints.push(ckpt);
            }
        }
        hook.end_epoch(epoch, &model)?;
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        checkpoints,
    })
}

/// Clip-level metrics of `model` on its canonical (uniform) view of each clip.
pub fn evaluate(model: &ClipClassifier, examples: &[Example]) -> Result<MetricReport> {
    let preds = examples
        .par_iter()
        .map(|e| model.predict(e.clip).map(|p| p.predicted_class))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<usize> = examples.iter().map(|e| e.label).collect();
    classification_metrics(&preds, &gts, &LabelSpace::numbered(model.num_classes())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ClipModelSpec {
        ClipModelSpec {
            head: "attention".into(),
            num_classes: 2,
            embed_dim: 4,
            encoder_channels: [3, 4],
            attention_heads: 2,
            frames_per_view: 2,
            frame_shape: [4, 4, 3],
            pooling: crate::models::SpatialPooling::Both,
        }
    }

    fn clip_of_len(id: &str, level: f32, t: usize) -> VideoClip {
        let frames = (0..t * 4 * 4 * 3).map(|i| level * ((i % 5) as f32 / 4.0)).collect();
        VideoClip::new(id, [t, 4, 4, 3], frames, None).unwrap()
    }

    fn clip(id: &str, level: f32) -> VideoClip {
        clip_of_len(id, level, 4)
    }

    #[test]
    fn checkpoint_epochs_round_up() {
        let e = |n| checkpoint_epochs(n).map(|(e, _)| e);
        assert_eq!(e(9), [3, 6, 9]);
        assert_eq!(e(10), [4, 7, 10]);
        assert_eq!(e(1), [1, 1, 1]);
    }

    #[test]
    fn overfitting_a_single_example_decreases_loss() {
        // T = k keeps the training view fixed across epochs.
        let c = clip_of_len("a", 0.8, 2);
        let examples = [Example { clip: &c, label: 1 }];
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let out = train_supervised(&spec(), &examples, &cfg, 3).unwrap();
        assert!(out.loss_curve.windows(2).all(|w| w[1] < w[0]), "{:?}", out.loss_curve);
        assert_eq!(out.checkpoints.len(), 3);
        let tags: Vec<_> = out.checkpoints.iter().map(|c| c.fraction_tag).collect();
        assert_eq!(tags, vec![FractionTag::Third, FractionTag::TwoThirds, FractionTag::Final]);
        assert_eq!(out.checkpoints.iter().map(|c| c.step).collect::<Vec<_>>(), vec![2, 4, 5]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (a, b) = (clip("a", 0.9), clip("b", 0.3));
        let examples = [Example { clip: &a, label: 0 }, Example { clip: &b, label: 1 }];
        let cfg = TrainConfig {
            epochs: 3,
            augmentation: AugmentationSpec::strong(),
            ..TrainConfig::default()
        };
        let x = train_supervised(&spec(), &examples, &cfg, 17).unwrap();
        let y = train_supervised(&spec(), &examples, &cfg, 17).unwrap();
        assert_eq!(x.model.params().values(), y.model.params().values());
        let z = train_supervised(&spec(), &examples, &cfg, 18).unwrap();
        assert_ne!(x.model.params().values(), z.model.params().values());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(train_supervised(&spec(), &[], &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
