//! Evaluation metrics and order statistics.

use crate::error::{invalid, Result};
use crate::types::{LabelSpace, MetricReport};

/// Dice overlap of the binary masks `pred == class_id` and `gt == class_id`.
/// Two empty masks score 1.0.
pub fn dice_score(pred_mask: &[usize], gt_mask: &[usize], class_id: usize) -> Result<f64> {
    if pred_mask.len() != gt_mask.len() {
        return invalid(format!(
            "mask shape mismatch: {} vs {} pixels",
            pred_mask.len(),
            gt_mask.len()
        ));
    }
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred_mask.iter().zip(gt_mask) {
        let (in_p, in_g) = (a == class_id, b == class_id);
        p += in_p as usize;
        g += in_g as usize;
        inter += (in_p && in_g) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Mean Dice over the foreground classes `1..num_classes`.
pub fn foreground_dice(pred_mask: &[usize], gt_mask: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    (1..num_classes)
        .map(|c| dice_score(pred_mask, gt_mask, c))
        .collect()
}

pub fn classification_metrics(preds: &[usize], gts: &[usize], labels: &LabelSpace) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return invalid(format!("{} predictions for {} ground truths", preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return invalid("metrics need at least one prediction");
    }
    let k = labels.num_classes();
    if let Some(bad) = preds.iter().chain(gts).find(|&&c| c >= k) {
        return invalid(format!("class index {bad} outside label space of {k}"));
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&p, &g) in preds.iter().zip(gts) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let correct: usize = tp.iter().sum();
    Ok(MetricReport {
        accuracy: correct as f64 / preds.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / k as f64,
        per_class_f1,
        dice: None,
    })
}

/// Percentile `q` in `[0, 100]` with linear interpolation between closest
/// ranks: position `q/100 * (n-1)` in the sorted values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&q) {
        return invalid(format!("percentile {q} outside [0, 100]"));
    }
    if values.is_empty() {
        return invalid("percentile of an empty list");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, q))
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 50.0)
}

/// Interquartile range, `p75 - p25`.
pub fn iqr(values: &[f64]) -> Result<f64> {
    Ok(percentile(values, 75.0)? - percentile(values, 25.0)?)
}
