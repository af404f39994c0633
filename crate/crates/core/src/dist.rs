//! Dual Invariance Self-Training.
//!
//! A teacher trained on labeled clips pseudo-labels the unlabeled pool. Each
//! pseudo-label gets a reliability score from three teacher checkpoints; the
//! top half by score is kept, and a label is used only if the prediction also
//! survives a change of frame sampling and a strong augmentation. The student
//! trained on labeled plus accepted clips then becomes the next teacher.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::error::{invalid, Result};
use crate::models::{
    evaluate, load_checkpoint, train_supervised, Checkpoint, ClipClassifier, ClipModelSpec, Example, FractionTag,
    TrainConfig,
};
use crate::prob::argmax_class;
use crate::rng::{derive_named, seeded};
use crate::sampling::{uniform_sample, SamplingStrategy};
use crate::types::{MetricReport, Prediction, VideoClip};

pub const DIST_STAGES: usize = 2;

/// Teacher probabilities for one clip at one-third, two-thirds and the end of training.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointTriple {
    /// Probability the one-third checkpoint gives `predicted_class`.
    pub p_third: f64,
    /// Probability the two-thirds checkpoint gives `predicted_class`.
    pub p_two_thirds: f64,
    pub p_final_vec: Vec<f64>,
    pub predicted_class: usize,
}

impl CheckpointTriple {
    pub fn new(p_third: f64, p_two_thirds: f64, p_final_vec: Vec<f64>) -> Result<Self> {
        let predicted_class = argmax_class(&p_final_vec)?;
        let triple = Self {
            p_third,
            p_two_thirds,
            p_final_vec,
            predicted_class,
        };
        triple.validate()?;
        Ok(triple)
    }

    pub fn p_final(&self) -> f64 {
        self.p_final_vec[self.predicted_class]
    }

    fn validate(&self) -> Result<()> {
        let probs = [self.p_third, self.p_two_thirds]
            .into_iter()
            .chain(self.p_final_vec.iter().copied());
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.predicted_class >= self.p_final_vec.len() {
            return invalid("predicted class outside the final probability vector");
        }
        Ok(())
    }
}

/// `ab / (a + b)`, with `h(0, 0) = 0`.
fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        a * b / (a + b)
    }
}

/// `R = (h(p⅓, pf) + 2·h(p⅔, pf)) / 3`, in `[0, 1/2]`.
pub fn reliability_score(triple: &CheckpointTriple) -> Result<f64> {
    triple.validate()?;
    let pf = triple.p_final();
    Ok((harmonic(triple.p_third, pf) + 2.0 * harmonic(triple.p_two_thirds, pf)) / 3.0)
}

/// The first `ceil(N/2)` ids by descending score, ties by ascending id.
pub fn retain_top_half(scored: &[(String, f64)]) -> Result<BTreeSet<String>> {
    if scored.is_empty() {
        return invalid("cannot rank an empty list of pseudo-labels");
    }
    if let Some((id, s)) = scored.iter().find(|(_, s)| s.is_nan()) {
        return invalid(format!("reliability of `{id}` is NaN ({s})"));
    }
    let mut order: Vec<&(String, f64)> = scored.iter().collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    Ok(order
        .into_iter()
        .take(scored.len().div_ceil(2))
        .map(|(id, _)| id.clone())
        .collect())
}

fn same_argmax(a: &Prediction, b: &Prediction) -> Result<bool> {
    if a.num_classes() != b.num_classes() {
        return invalid(format!(
            "predictions over {} and {} classes",
            a.num_classes(),
            b.num_classes()
        ));
    }
    Ok(a.predicted_class == b.predicted_class)
}

/// Agreement of the predicted class across two frame-sampling views.
pub fn temporal_invariance_check(pred_view_a: &Prediction, pred_view_b: &Prediction) -> Result<bool> {
    same_argmax(pred_view_a, pred_view_b)
}

/// Agreement of the predicted class between a weak and a strongly augmented view.
pub fn transformation_invariance_check(pred_weak: &Prediction, pred_strong: &Prediction) -> Result<bool> {
    same_argmax(pred_weak, pred_strong)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub clip_id: String,
    pub label: usize,
    pub reliability: f64,
    pub retained_by_rank: bool,
    pub temporal_ok: bool,
    pub transform_ok: bool,
}

pub fn dual_filter(candidate: &PseudoLabel) -> bool {
    candidate.retained_by_rank && candidate.temporal_ok && candidate.transform_ok
}

/// The views compared by the two invariance checks. The canonical view is
/// always uniform with no augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceViews {
    /// Sampling of the second view for the temporal check.
    pub temporal: SamplingStrategy,
    /// Augmentation of the second view for the transformation check.
    pub strong: AugmentationSpec,
}

impl Default for InvarianceViews {
    fn default() -> Self {
        Self {
            temporal: SamplingStrategy::SegmentRandom,
            strong: AugmentationSpec::strong(),
        }
    }
}

/// The three checkpoints of one teacher run.
pub struct TeacherCheckpoints {
    pub third: ClipClassifier,
    pub two_thirds: ClipClassifier,
    pub last: ClipClassifier,
}

impl TeacherCheckpoints {
    pub fn from_checkpoints(spec: &ClipModelSpec, checkpoints: &[Checkpoint]) -> Result<Self> {
        let load = |tag: FractionTag| match checkpoints.iter().find(|c| c.fraction_tag == tag) {
            Some(c) => load_checkpoint(spec, c),
            None => invalid(format!("teacher checkpoint tagged {tag:?} is missing")),
        };
        Ok(Self {
            third: load(FractionTag::Third)?,
            two_thirds: load(FractionTag::TwoThirds)?,
            last: load(FractionTag::Final)?,
        })
    }
}

struct ClipVerdict {
    clip_id: String,
    label: usize,
    reliability: f64,
    temporal_ok: bool,
    transform_ok: bool,
}

fn judge_clip(teacher: &TeacherCheckpoints, clip: &VideoClip, views: &InvarianceViews, seed: u64) -> Result<ClipVerdict> {
    let k = teacher.last.spec().frames_per_view;
    let canonical = clip.view(&uniform_sample(clip.len(), k)?)?;
    let final_pred = teacher.last.predict_frames(&canonical.frames, canonical.shape)?;
    let label = final_pred.predicted_class;
    let p_third = teacher.third.predict_frames(&canonical.frames, canonical.shape)?.probs[label];
    let p_two_thirds = teacher.two_thirds.predict_frames(&canonical.frames, canonical.shape)?.probs[label];
    let triple = CheckpointTriple::new(p_third, p_two_thirds, final_pred.probs.clone())?;

    // Keyed by clip id so verdicts do not depend on processing order.
    let mut rng = seeded(derive_named(seed, &clip.clip_id));
    let alt_spec = crate::sampling::SamplingSpec::new(views.temporal, k, 0);
    let alt = clip.view(&alt_spec.sample(clip.len(), &mut rng)?)?;
    let alt_pred = teacher.last.predict_frames(&alt.frames, alt.shape)?;
    let strong = views.strong.apply(&canonical.frames, canonical.shape, &mut rng);
    let strong_pred = teacher.last.predict_frames(&strong, canonical.shape)?;
    Ok(ClipVerdict {
        clip_id: clip.clip_id.clone(),
        label,
        reliability: reliability_score(&triple)?,
        temporal_ok: temporal_invariance_check(&final_pred, &alt_pred)?,
        transform_ok: transformation_invariance_check(&final_pred, &strong_pred)?,
    })
}

/// Pseudo-labels with all verdicts for `clips`, in input order. Clips are
/// judged in parallel; each draws its views from a seed keyed by its id.
pub fn generate_pseudo_labels(
    teacher: &TeacherCheckpoints,
    clips: &[&VideoClip],
    views: &InvarianceViews,
    seed: u64,
) -> Result<Vec<PseudoLabel>> {
    views.strong.validate()?;
    let verdicts = clips
        .par_iter()
        .map(|clip| judge_clip(teacher, clip, views, seed))
        .collect::<Result<Vec<_>>>()?;
    if verdicts.is_empty() {
        return Ok(Vec::new());
    }
    let scored: Vec<(String, f64)> = verdicts.iter().map(|v| (v.clip_id.clone(), v.reliability)).collect();
    let retained = retain_top_half(&scored)?;
    Ok(verdicts
        .into_iter()
        .map(|v| PseudoLabel {
            retained_by_rank: retained.contains(&v.clip_id),
            clip_id: v.clip_id,
            label: v.label,
            reliability: v.reliability,
            temporal_ok: v.temporal_ok,
            transform_ok: v.transform_ok,
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistConfig {
    pub train: TrainConfig,
    pub views: InvarianceViews,
    /// Student epochs; `None` reuses `train.epochs`.
    pub student_epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub n_pseudo: usize,
    pub n_accepted: usize,
    /// Precision of accepted pseudo-labels against hidden ground truth.
    pub pseudo_precision: Option<f64>,
    /// Precision of every pseudo-label before filtering.
    pub pseudo_precision_all: Option<f64>,
    pub student_metrics: Option<MetricReport>,
}

pub struct DistOutcome {
    pub stages: Vec<StageReport>,
    pub pseudo_labels: Vec<Vec<PseudoLabel>>,
    pub student: ClipClassifier,
}

fn precision<'a>(labels: impl Iterator<Item = &'a PseudoLabel>, truth: &HashMap<String, usize>) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for pl in labels {
        if let Some(&gt) = truth.get(&pl.clip_id) {
            n += 1;
            hit += (gt == pl.label) as usize;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Two teacher→student stages. Every training run uses `seed`, so with no
/// unlabeled clips each student equals the supervised baseline. `truth`
/// holds hidden labels of unlabeled clips for precision reporting; `eval`
/// is scored after each stage when nonempty.
pub fn run_dist(
    spec: &ClipModelSpec,
    labeled: &[Example],
    unlabeled: &[&VideoClip],
    eval: &[Example],
    truth: &HashMap<String, usize>,
    config: &DistConfig,
    seed: u64,
) -> Result<DistOutcome> {
    if labeled.is_empty() {
        return invalid("DIST needs at least one labeled clip");
    }
    let mut teacher_run = train_supervised(spec, labeled, &config.train, seed)?;
    let by_id: HashMap<&str, &VideoClip> = unlabeled.iter().map(|c| (c.clip_id.as_str(), *c)).collect();
    let student_config = TrainConfig {
        epochs: config.student_epochs.unwrap_or(config.train.epochs),
        ..config.train.clone()
    };
    let mut stages = Vec::with_capacity(DIST_STAGES);
    let mut all_labels = Vec::with_capacity(DIST_STAGES);
    for stage in 1..=DIST_STAGES {
        let teacher = TeacherCheckpoints::from_checkpoints(spec, &teacher_run.checkpoints)?;
        let stage_seed = derive_named(seed, &format!("dist.stage{stage}"));
        let pseudo = generate_pseudo_labels(&teacher, unlabeled, &config.views, stage_seed)?;
        let mut examples = labeled.to_vec();
        examples.extend(pseudo.iter().filter(|p| dual_filter(p)).map(|p| Example {
            clip: by_id[p.clip_id.as_str()],
            label: p.label,
        }));
        let student_run = train_supervised(spec, &examples, &student_config, seed)?;
        let student_metrics = if eval.is_empty() {
            None
        } else {
            Some(evaluate(&student_run.model, eval)?)
        };
        stages.push(StageReport {
            stage,
            n_pseudo: pseudo.len(),
            n_accepted: examples.len() - labeled.len(),
            pseudo_precision: precision(pseudo.iter().filter(|p| dual_filter(p)), truth),
            pseudo_precision_all: precision(pseudo.iter(), truth),
            student_metrics,
        });
        all_labels.push(pseudo);
        teacher_run = student_run;
    }
    Ok(DistOutcome {
        stages,
        pseudo_labels: all_labels,
        student: teacher_run.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(a: f64, b: f64, pf: f64) -> CheckpointTriple {
        CheckpointTriple::new(a, b, vec![pf, 1.0 - pf]).unwrap()
    }

    #[test]
    fn reliability_worked_values() {
        assert_eq!(reliability_score(&triple(1.0, 1.0, 1.0)).unwrap(), 0.5);
        let zero = CheckpointTriple {
            p_third: 0.0,
            p_two_thirds: 0.0,
            p_final_vec: vec![0.0, 0.0],
            predicted_class: 0,
        };
        assert_eq!(reliability_score(&zero).unwrap(), 0.0);
        let r = reliability_score(&triple(0.6, 0.8, 0.9)).unwrap();
        assert!((r - 0.402353).abs() < 1e-6, "{r}");
    }

    #[test]
    fn reliability_rejects_out_of_range() {
        assert!(CheckpointTriple::new(1.2, 0.5, vec![0.6, 0.4]).is_err());
        assert!(CheckpointTriple::new(0.2, -0.1, vec![0.6, 0.4]).is_err());
    }

    #[test]
    fn retention_examples() {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let scored: Vec<(String, f64)> = [("a", 0.4), ("b", 0.1), ("c", 0.3), ("d", 0.2)]
            .iter()
            .map(|(i, s)| (i.to_string(), *s))
            .collect();
        assert_eq!(retain_top_half(&scored).unwrap(), ids(&["a", "c"]));
        assert_eq!(retain_top_half(&[("x".into(), 0.0)]).unwrap(), ids(&["x"]));
        let tied: Vec<(String, f64)> = ["d", "b", "c", "a"].iter().map(|i| (i.to_string(), 0.2)).collect();
        assert_eq!(retain_top_half(&tied).unwrap(), ids(&["a", "b"]));
        assert!(retain_top_half(&[]).is_err());
    }

    #[test]
    fn invariance_checks_compare_argmax_only() {
        let p = |v: Vec<f64>| Prediction::from_probs(v).unwrap();
        assert!(temporal_invariance_check(&p(vec![0.4, 0.6]), &p(vec![0.1, 0.9])).unwrap());
        assert!(!temporal_invariance_check(&p(vec![0.2, 0.7, 0.1]), &p(vec![0.2, 0.1, 0.7])).unwrap());
        assert!(transformation_invariance_check(&p(vec![0.5, 0.5]), &p(vec![0.9, 0.1])).unwrap());
        assert!(temporal_invariance_check(&p(vec![0.5, 0.5]), &p(vec![0.2, 0.2, 0.6])).is_err());
    }

    #[test]
    fn dual_filter_needs_all_three() {
        let mut pl = PseudoLabel {
            clip_id: "a".into(),
            label: 0,
            reliability: 0.3,
            retained_by_rank: true,
            temporal_ok: true,
            transform_ok: true,
        };
        assert!(dual_filter(&pl));
        pl.transform_ok = false;
        assert!(!dual_filter(&pl));
        pl.transform_ok = true;
        pl.retained_by_rank = false;
        assert!(!dual_filter(&pl));
    }

    #[test]
    fn missing_checkpoint_tag_is_an_error() {
        let spec = ClipModelSpec {
            frame_shape: [8, 8, 3],
            frames_per_view: 2,
            embed_dim: 8,
            ..ClipModelSpec::default()
        };
        let model = ClipClassifier::new(&spec, 0).unwrap();
        let ckpts = vec![
            crate::models::save_checkpoint(&model, 1, FractionTag::Third),
            crate::models::save_checkpoint(&model, 3, FractionTag::Final),
        ];
        let err = TeacherCheckpoints::from_checkpoints(&spec, &ckpts).err().unwrap();
        assert!(err.to_string().contains("TwoThirds"));
    }
}
