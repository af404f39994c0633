//! SemiVT: contrastive learning with class prototypes (CLP) and temporal
//! consistency regularization (TCR).
//!
//! CLP pulls each labeled clip embedding toward its class prototype and away
//! from the nearest other prototype. TCR trains the student on an augmented
//! short view of unlabeled clips against confident hard labels from an EMA
//! teacher that sees the whole clip.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};
use crate::models::{evaluate, train_with_hook, ClipClassifier, ClipModelSpec, Example, TrainConfig, TrainingHook};
use crate::rng::{derive_named, seeded, SslRng};
use crate::sampling::{default_short_window, long_short_sample};
use crate::types::VideoClip;

/// Per-class embedding centroids maintained by exponential moving average.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeStore {
    prototypes: Vec<f64>,
    initialized: Vec<bool>,
    dim: usize,
    momentum: f64,
}

impl PrototypeStore {
    pub fn new(num_classes: usize, dim: usize, momentum: f64) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return invalid("prototype store needs at least one class and dimension");
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return invalid(format!("prototype momentum {momentum} outside (0, 1)"));
        }
        Ok(Self {
            prototypes: vec![0.0; num_classes * dim],
            initialized: vec![false; num_classes],
            dim,
            momentum,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.initialized.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized.get(class).copied().unwrap_or(false)
    }

    /// The prototype of `class` once it has been initialized.
    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.is_initialized(class)
            .then(|| &self.prototypes[class * self.dim..(class + 1) * self.dim])
    }

    /// Sets a prototype directly and marks it initialized.
    pub fn set(&mut self, class: usize, prototype: &[f64]) -> Result<()> {
        self.check(class, prototype)?;
        self.prototypes[class * self.dim..(class + 1) * self.dim].copy_from_slice(prototype);
        self.initialized[class] = true;
        Ok(())
    }

    fn check(&self, class: usize, e: &[f64]) -> Result<()> {
        if class >= self.num_classes() {
            return invalid(format!("class {class} outside {} prototypes", self.num_classes()));
        }
        if e.len() != self.dim {
            return invalid(format!("embedding of length {} for prototypes of dim {}", e.len(), self.dim));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return invalid("embedding must be finite");
        }
        Ok(())
    }
}

/// First update copies `e`; later ones blend `α·p + (1-α)·e`.
pub fn update_prototype(store: &mut PrototypeStore, class: usize, e: &[f64]) -> Result<()> {
    store.check(class, e)?;
    if !store.initialized[class] {
        return store.set(class, e);
    }
    let a = store.momentum;
    let row = &mut store.prototypes[class * store.dim..(class + 1) * store.dim];
    for (p, &x) in row.iter_mut().zip(e) {
        *p = a * *p + (1.0 - a) * x;
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest initialized prototype of a class other than `class`, ties to the
/// lowest index. `None` when no such class exists.
pub fn hard_negative_prototype(store: &PrototypeStore, e: &[f64], class: usize) -> Option<usize> {
    (0..store.num_classes())
        .filter(|&k| k != class)
        .filter_map(|k| store.get(k).map(|p| (k, distance(e, p))))
        .fold(None, |best: Option<(usize, f64)>, (k, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((k, d)),
        })
        .map(|(k, _)| k)
}

/// `max(0, |e - p⁺| - |e - p⁻| + m)`.
pub fn clp_triplet_loss(e: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if e.len() != positive.len() || e.len() != negative.len() {
        return invalid(format!(
            "dimension mismatch: embedding {}, positive {}, negative {}",
            e.len(),
            positive.len(),
            negative.len()
        ));
    }
    if margin < 0.0 || !margin.is_finite() {
        return invalid(format!("margin {margin} must be finite and >= 0"));
    }
    Ok((distance(e, positive) - distance(e, negative) + margin).max(0.0))
}

/// The triplet hinge recorded on a graph; prototypes are constants.
pub fn clp_triplet_graph(g: &mut Graph, e: Var, positive: &[f64], negative: &[f64], margin: f64) -> Var {
    let shape = g.value(e).shape.clone();
    let pos = g.leaf(Tensor::new(shape.clone(), positive.to_vec()));
    let neg = g.leaf(Tensor::new(shape, negative.to_vec()));
    let dp = g.sub(e, pos);
    let dp = g.norm(dp);
    let dn = g.sub(e, neg);
    let dn = g.norm(dn);
    let gap = g.sub(dp, dn);
    let m = g.leaf(Tensor::scalar(margin));
    let gap = g.add(gap, m);
    g.relu(gap)
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return invalid("not a probability vector");
    }
    Ok(())
}

/// Hard-label cross-entropy of the student against a confident teacher.
/// Returns `(0, false)` when the teacher's top probability is below `tau`.
pub fn tcr_loss(teacher_probs: &[f64], student_probs: &[f64], tau: f64) -> Result<(f64, bool)> {
    check_probs(teacher_probs)?;
    check_probs(student_probs)?;
    if teacher_probs.len() != student_probs.len() {
        return invalid("teacher and student predict over different label spaces");
    }
    let target = crate::prob::argmax_class(teacher_probs)?;
    if teacher_probs[target] < tau {
        return Ok((0.0, false));
    }
    let p = student_probs[target];
    Ok((if p >= 1.0 { 0.0 } else { -p.ln() }, true))
}

/// Sum of counted losses over `max(1, count)`.
pub fn tcr_batch_loss(items: &[(f64, bool)]) -> f64 {
    let count = items.iter().filter(|(_, c)| *c).count();
    let total: f64 = items.iter().filter(|(_, c)| *c).map(|(l, _)| l).sum();
    total / count.max(1) as f64
}

/// `teacher ← m·teacher + (1-m)·student`.
pub fn ema_update(teacher: &mut [f64], student: &[f64], momentum: f64) {
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = momentum * *t + (1.0 - momentum) * s;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcrConfig {
    pub confidence_threshold: f64,
    pub ema_teacher_momentum: f64,
    /// Short-view window; defaults to `ceil(T/4)` clamped to `[k, T]`.
    pub short_window: Option<usize>,
    pub student_augmentation: AugmentationSpec,
    /// Unlabeled clips per optimization step.
    pub unlabeled_batch: usize,
}

impl Default for TcrConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.8,
            ema_teacher_momentum: 0.99,
            short_window: None,
            student_augmentation: AugmentationSpec::strong(),
            unlabeled_batch: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiVtConfig {
    pub train: TrainConfig,
    pub prototype_momentum: f64,
    pub margin: f64,
    pub lambda_clp: f64,
    pub lambda_tcr: f64,
    pub tcr: TcrConfig,
}

impl Default for SemiVtConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            prototype_momentum: 0.9,
            margin: 0.2,
            lambda_clp: 1.0,
            lambda_tcr: 1.0,
            tcr: TcrConfig::default(),
        }
    }
}

impl SemiVtConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.tcr.student_augmentation.validate()?;
        if self.lambda_clp < 0.0 || self.lambda_tcr < 0.0 || self.margin < 0.0 {
            return invalid("loss weights and margin must be >= 0");
        }
        let t = &self.tcr;
        if !(t.ema_teacher_momentum > 0.0 && t.ema_teacher_momentum < 1.0) {
            return invalid("ema_teacher_momentum must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&t.confidence_threshold) {
            return invalid("confidence_threshold must lie in [0, 1]");
        }
        if t.unlabeled_batch == 0 {
            return invalid("unlabeled_batch must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_sup: f64,
    pub loss_clp: f64,
    pub loss_tcr: f64,
    pub tcr_pass_fraction: f64,
    pub val_accuracy: Option<f64>,
}

pub struct SemiVtOutcome {
    pub student: ClipClassifier,
    pub teacher: Option<ClipClassifier>,
    pub prototypes: PrototypeStore,
    pub epochs: Vec<EpochReport>,
}

struct SemiVtHook<'a> {
    config: &'a SemiVtConfig,
    prototypes: PrototypeStore,
    unlabeled: &'a [&'a VideoClip],
    val: &'a [Example<'a>],
    teacher: Option<ClipClassifier>,
    rng: SslRng,
    queue: Vec<usize>,
    clp_sum: f64,
    tcr_sum: f64,
    tcr_steps: usize,
    seen: usize,
    passed: usize,
    reports: Vec<EpochReport>,
}

impl SemiVtHook<'_> {
    fn next_unlabeled(&mut self) -> usize {
        if self.queue.is_empty() {
            self.queue = (0..self.unlabeled.len()).collect();
            self.queue.shuffle(&mut self.rng);
            self.queue.reverse();
        }
        self.queue.pop().expect("refilled")
    }
}

impl TrainingHook for SemiVtHook<'_> {
    fn labeled_loss(&mut self, g: &mut Graph, embedding: Var, label: usize, weight: f64) -> Result<Option<Var>> {
        if self.config.lambda_clp == 0.0 {
            return Ok(None);
        }
        let e = g.l2_normalize_rows(embedding);
        let value = g.value(e).data.clone();
        let term = match (self.prototypes.get(label), hard_negative_prototype(&self.prototypes, &value, label)) {
            (Some(pos), Some(neg)) => {
                let (pos, neg) = (pos.to_vec(), self.prototypes.get(neg).expect("initialized").to_vec());
                let hinge = clp_triplet_graph(g, e, &pos, &neg, self.config.margin);
                self.clp_sum += weight * g.scalar(hinge);
                Some(g.scale(hinge, weight * self.config.lambda_clp))
            }
            _ => None,
        };
        update_prototype(&mut self.prototypes, label, &value)?;
        Ok(term)
    }

    fn unlabeled_step(&mut self, model: &ClipClassifier, grads: &mut [f64]) -> Result<()> {
        if self.config.lambda_tcr == 0.0 || self.unlabeled.is_empty() {
            return Ok(());
        }
        if self.teacher.is_none() {
            self.teacher = Some(model.clone());
        }
        let tcr = &self.config.tcr;
        let k = model.spec().frames_per_view;
        let mut views = Vec::with_capacity(tcr.unlabeled_batch);
        for _ in 0..tcr.unlabeled_batch {
            let clip = self.unlabeled[self.next_unlabeled()];
            let window = tcr.short_window.unwrap_or_else(|| default_short_window(clip.len(), k));
            let (long, short) = long_short_sample(clip.len(), k, window, &mut self.rng)?;
            let long = clip.view(&long)?;
            let short = clip.view(&short)?;
            let student_frames = tcr.student_augmentation.apply(&short.frames, short.shape, &mut self.rng);
            views.push((long, student_frames, short.shape));
        }
        let teacher = self.teacher.as_ref().expect("initialized above");
        let items = views
            .into_iter()
            .map(|(long, frames, shape)| Ok((teacher.predict_frames(&long.frames, long.shape)?, frames, shape)))
            .collect::<Result<Vec<_>>>()?;
        let confident: Vec<_> = items
            .iter()
            .filter(|(t, _, _)| t.confidence >= tcr.confidence_threshold)
            .collect();
        self.seen += items.len();
        self.passed += confident.len();
        self.tcr_steps += 1;
        if confident.is_empty() {
            return Ok(());
        }
        let weight = self.config.lambda_tcr / confident.len() as f64;
        let mut step_loss = 0.0;
        for (t, frames, shape) in confident {
            let mut g = Graph::new();
            let p = model.params().bind(&mut g);
            let out = model.forward_graph(&mut g, &p, frames, *shape)?;
            let ce = g.cross_entropy_rows(out.logits, &[t.predicted_class], &[1.0]);
            step_loss += g.scalar(ce);
            let gr = g.backward(ce);
            model.params().gather_into(&p, &gr, weight, grads);
        }
        self.tcr_sum += step_loss * weight / self.config.lambda_tcr;
        Ok(())
    }

    fn after_update(&mut self, model: &ClipClassifier) {
        if let Some(teacher) = self.teacher.as_mut() {
            let mut values = teacher.params().values().to_vec();
            ema_update(&mut values, model.params().values(), self.config.tcr.ema_teacher_momentum);
            teacher.params_mut().set_values_exact(&values);
        }
    }

    fn end_epoch(&mut self, epoch: usize, model: &ClipClassifier) -> Result<()> {
        let val_accuracy = if self.val.is_empty() {
            None
        } else {
            Some(evaluate(model, self.val)?.accuracy)
        };
        self.reports.push(EpochReport {
            epoch,
            loss_sup: 0.0,
            loss_clp: self.clp_sum,
            loss_tcr: self.tcr_sum / self.tcr_steps.max(1) as f64,
            tcr_pass_fraction: if self.seen == 0 { 0.0 } else { self.passed as f64 / self.seen as f64 },
            val_accuracy,
        });
        self.clp_sum = 0.0;
        self.tcr_sum = 0.0;
        self.tcr_steps = 0;
        self.seen = 0;
        self.passed = 0;
        Ok(())
    }
}

/// Trains a student with supervised, CLP and TCR losses. A zero weight
/// skips its term entirely, so both at zero reproduce [`crate::models::train_supervised`].
pub fn train_semivt(
    spec: &ClipModelSpec,
    labeled: &[Example],
    unlabeled: &[&VideoClip],
    val: &[Example],
    config: &SemiVtConfig,
    seed: u64,
) -> Result<SemiVtOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return invalid("SemiVT needs at least one labeled clip");
    }
    let mut hook = SemiVtHook {
        config,
        prototypes: PrototypeStore::new(spec.num_classes, spec.embed_dim, config.prototype_momentum)?,
        unlabeled,
        val,
        teacher: None,
        rng: seeded(derive_named(seed, "semivt.tcr")),
        queue: Vec::new(),
        clp_sum: 0.0,
        tcr_sum: 0.0,
        tcr_steps: 0,
        seen: 0,
        passed: 0,
        reports: Vec::new(),
    };
    let outcome = train_with_hook(spec, labeled, &config.train, seed, &mut hook)?;
    let batches = labeled.len().div_ceil(config.train.batch_size) as f64;
    let mut epochs = hook.reports;
    for (r, &sup) in epochs.iter_mut().zip(&outcome.loss_curve) {
        r.loss_sup = sup;
        r.loss_clp /= batches;
    }
    Ok(SemiVtOutcome {
        student: outcome.model,
        teacher: hook.teacher,
        prototypes: hook.prototypes,
        epochs,
    })
}
