//! Oracles, gradient checks and small configs shared by the integration
//! tests and the acceptance harness.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use sslv::autodiff::Graph;
use sslv::encore::{ThresholdProfile, IGNORE};
use sslv::experiment::ExperimentConfig;
use sslv::models::train::clip_loss_and_grad;
use sslv::models::{ClipClassifier, ClipModelSpec, HEADS};
use sslv::rng::{seeded, SslRng};
use sslv::semivt::clp_triplet_graph;
use sslv::SegPrediction;

pub fn rng(seed: u64) -> SslRng {
    seeded(seed)
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).unwrap()
}

/// Reliability written from the definition: two weighted harmonic halves.
pub fn reliability_oracle(p_third: f64, p_two_thirds: f64, pf: f64) -> f64 {
    let half_harmonic = |a: f64, b: f64| if a == 0.0 || b == 0.0 { 0.0 } else { 1.0 / (1.0 / a + 1.0 / b) };
    (half_harmonic(p_third, pf) + 2.0 * half_harmonic(p_two_thirds, pf)) / 3.0
}

/// A probability vector of length `k`, sometimes one-hot.
pub fn random_distribution(r: &mut SslRng, k: usize) -> Vec<f64> {
    if r.random_bool(0.05) {
        let mut v = vec![0.0; k];
        v[r.random_range(0..k)] = 1.0;
        return v;
    }
    let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Probability in `[0, 1]` with the endpoints drawn now and then.
pub fn random_probability(r: &mut SslRng) -> f64 {
    match r.random_range(0..20) {
        0 => 0.0,
        1 => 1.0,
        _ => r.random(),
    }
}

/// Ids of the top `ceil(N/2)` by score, ties to the smaller id, via a full
/// insertion sort.
pub fn retention_oracle(scored: &[(String, f64)]) -> Vec<String> {
    let mut sorted: Vec<&(String, f64)> = Vec::new();
    for item in scored {
        let pos = sorted
            .iter()
            .position(|other| item.1 > other.1 || (item.1 == other.1 && item.0 < other.0))
            .unwrap_or(sorted.len());
        sorted.insert(pos, item);
    }
    let mut keep: Vec<String> = sorted[..scored.len().div_ceil(2)].iter().map(|x| x.0.clone()).collect();
    keep.sort();
    keep
}

/// Linear-interpolation percentile over a bubble-sorted copy.
pub fn percentile_oracle(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
            }
        }
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

/// A prediction from random logits; `k` classes on an `h x w` grid.
pub fn random_seg_prediction(r: &mut SslRng, h: usize, w: usize, k: usize) -> SegPrediction {
    let mut hwc = Vec::with_capacity(h * w * k);
    for _ in 0..h * w {
        let logits: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exp.iter().sum();
        hwc.extend(exp.iter().map(|e| e / z));
    }
    SegPrediction::from_hwc(&hwc, h, w, k).unwrap()
}

pub fn random_mask(r: &mut SslRng, pixels: usize, k: usize) -> Vec<usize> {
    (0..pixels).map(|_| r.random_range(0..k)).collect()
}

/// Profile drawn from a coarse grid so candidates often tie.
pub fn random_profile(r: &mut SslRng, k: usize) -> ThresholdProfile {
    let grid = [0.2, 0.4, 0.5, 0.6, 0.8, 0.95];
    let per_class_threshold = (0..k).map(|_| grid[r.random_range(0..grid.len())]).collect();
    ThresholdProfile {
        per_class_threshold,
        source: sslv::encore::ProfileSource::Cac,
        percentile_q: None,
        candidate_grid: None,
    }
}

/// Mean foreground Dice of each candidate's pseudo-masks, pixel by pixel.
pub fn candidate_dice_oracle(candidates: &[ThresholdProfile], preds: &[SegPrediction], gts: &[Vec<usize>]) -> Vec<f64> {
    candidates
        .iter()
        .map(|cand| {
            let mut per_image = Vec::new();
            for (p, gt) in preds.iter().zip(gts) {
                let k = p.num_classes;
                let mut inter = vec![0usize; k];
                let mut pred_n = vec![0usize; k];
                let mut gt_n = vec![0usize; k];
                for px in 0..p.num_pixels() {
                    let c = p.argmax_mask[px];
                    let label = if p.prob(c, px) >= cand.per_class_threshold[c] { c } else { IGNORE };
                    if label != IGNORE {
                        pred_n[label] += 1;
                    }
                    gt_n[gt[px]] += 1;
                    if label == gt[px] {
                        inter[label] += 1;
                    }
                }
                let fg: Vec<f64> = (1..k)
                    .map(|c| {
                        if pred_n[c] + gt_n[c] == 0 {
                            1.0
                        } else {
                            2.0 * inter[c] as f64 / (pred_n[c] + gt_n[c]) as f64
                        }
                    })
                    .collect();
                per_image.push(fg.iter().sum::<f64>() / fg.len() as f64);
            }
            per_image.iter().sum::<f64>() / per_image.len() as f64
        })
        .collect()
}

/// Exhaustive selection: best Dice, then lowest mean threshold, then index.
pub fn act_oracle(candidates: &[ThresholdProfile], dice: &[f64]) -> usize {
    let mean = |p: &ThresholdProfile| p.per_class_threshold.iter().sum::<f64>() / p.per_class_threshold.len() as f64;
    let top = dice.iter().cloned().fold(f64::MIN, f64::max);
    (0..candidates.len())
        .filter(|&i| dice[i] == top)
        .min_by(|&a, &b| mean(&candidates[a]).total_cmp(&mean(&candidates[b])).then(a.cmp(&b)))
        .unwrap()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Max relative error of the triplet gradient over `configs` random
/// embeddings at least `1e-2` away from the hinge.
pub fn clp_gradcheck(configs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < configs {
        let d = r.random_range(2..17);
        let v = |r: &mut SslRng| (0..d).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (e, pos, neg) = (v(&mut r), v(&mut r), v(&mut r));
        let margin = r.random_range(0.0..0.5);
        let gap = norm(&sub(&e, &pos)) - norm(&sub(&e, &neg)) + margin;
        if gap.abs() < 1e-2 || norm(&sub(&e, &pos)) < 1e-2 || norm(&sub(&e, &neg)) < 1e-2 {
            continue;
        }
        let mut g = Graph::new();
        let ev = g.leaf(sslv::autodiff::Tensor::new(vec![1, d], e.clone()));
        let loss = clp_triplet_graph(&mut g, ev, &pos, &neg, margin);
        let grads = g.backward(loss);
        let analytic = grads.get_or_zeros(ev, d);
        let h = 1e-6;
        for i in 0..d {
            let at = |delta: f64| {
                let mut x = e.clone();
                x[i] += delta;
                sslv::semivt::clp_triplet_loss(&x, &pos, &neg, margin).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        done += 1;
    }
    worst
}

fn tiny_clip_spec(head: &str) -> ClipModelSpec {
    ClipModelSpec {
        head: head.into(),
        num_classes: 3,
        embed_dim: 6,
        encoder_channels: [2, 3],
        attention_heads: 2,
        frames_per_view: 3,
        frame_shape: [6, 6, 3],
        ..ClipModelSpec::default()
    }
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Max relative error of the supervised-step gradient over `configs` random
/// (head, init, clip, label) draws, `coords` parameters each. The numeric
/// side is a five-point stencil; coordinates where the stencils at `h` and
/// `2h` disagree straddle a ReLU kink and are redrawn.
pub fn supervised_gradcheck(configs: usize, coords: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let spec = tiny_clip_spec(HEADS[c % HEADS.len()].name);
        let model = ClipClassifier::new(&spec, r.random()).unwrap();
        let shape = [3, 6, 6, 3];
        let frames: Vec<f32> = (0..shape.iter().product::<usize>()).map(|_| r.random::<f32>()).collect();
        let label = r.random_range(0..3);
        let (_, analytic) = clip_loss_and_grad(&model, &frames, shape, label).unwrap();
        let base = model.params().values().to_vec();
        let loss_at = |params: &[f64]| {
            let m = ClipClassifier::with_parameters(&spec, params).unwrap();
            cross_entropy(&m.forward_frames(&frames, shape).unwrap().logits, label)
        };
        let h = 1e-4;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < coords && attempts < 20 * coords {
            attempts += 1;
            let i = r.random_range(0..base.len());
            let at = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                loss_at(&p)
            };
            let (f1, fm1, f2, fm2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            let wide = (f2 - fm2) / (4.0 * h);
            let narrow = (f1 - fm1) / (2.0 * h);
            if (wide - narrow).abs() > 1e-3 * wide.abs().max(narrow.abs()).max(1e-3) {
                continue;
            }
            let numeric = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
            worst = worst.max(relative_error(analytic[i], numeric));
            checked += 1;
        }
    }
    worst
}

/// A config small enough to run every method in about a second.
pub fn tiny_config(method: &str) -> ExperimentConfig {
    let text = format!(
        r#"
method = "{method}"
seeds = [0, 1]

[dataset]
num_classes = 2
clips_per_class = 6
frames = 8
height = 16
width = 16

[split]
labeled = 0.2
val = 0.0
test = 0.34

[model]
num_classes = 2
frames_per_view = 4
frame_shape = [16, 16, 3]
embed_dim = 8

[supervised]
epochs = 3

[dist.train]
epochs = 3

[semivt.train]
epochs = 3

[segmentation.dataset]
num_images = 12
height = 16
width = 16

[segmentation.split]
labeled = 0.34
val = 0.0
test = 0.25

[encore]
recalibration_period = 2

[encore.train]
epochs = 4
"#
    );
    ExperimentConfig::from_toml(&text).unwrap()
}
