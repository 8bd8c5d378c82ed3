//! Evaluation metrics for recognition, segmentation, detection, grounding
//! and captioning.
//!
//! Percent-valued metrics return values in `[0, 100]`; AP, recall@k hit rates
//! and ROUGE-L return fractions in `[0, 1]`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// A labeled interval, with a confidence when it is a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub category: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub score: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64, category: usize) -> Self {
        Self {
            start,
            end,
            category,
            score: 1.0,
        }
    }

    pub fn scored(start: f64, end: f64, category: usize, score: f64) -> Self {
        Self {
            start,
            end,
            category,
            score,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Named metric values with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub samples: usize,
    pub classes: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub thresholds: Vec<f64>,
}

impl MetricReport {
    pub fn is_finite(&self) -> bool {
        self.metrics.values().all(|v| v.is_finite())
    }
}

/// Temporal IoU: overlap over union. Zero-length intervals score 1 only
/// against the identical point.
pub fn t_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Mean over classes of the fraction of each class's instances whose label
/// is among the first `k` entries of its prediction list, × 100.
pub fn class_mean_recall_at_k(topk: &[Vec<usize>], gt: &[usize], k: usize) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Undefined("recall@k over zero instances".into()));
    }
    if topk.len() != gt.len() {
        return Err(shape_err("recall@k", format!("{} prediction lists, {} labels", topk.len(), gt.len())));
    }
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (preds, &label) in topk.iter().zip(gt) {
        let e = per.entry(label).or_default();
        e.1 += 1;
        if preds.iter().take(k).any(|&p| p == label) {
            e.0 += 1;
        }
    }
    let sum: f64 = per.values().map(|&(hit, n)| hit as f64 / n as f64).sum();
    Ok(100.0 * sum / per.len() as f64)
}

/// Exact-match rate × 100.
pub fn framewise_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(shape_err("framewise accuracy", format!("{} predictions, {} labels", pred.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::Undefined("accuracy over zero frames".into()));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Maximal constant runs as segments over token indices `[start, end)`.
pub fn label_runs(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.category == l => s.end = (i + 1) as f64,
            _ => out.push(Segment::new(i as f64, (i + 1) as f64, l)),
        }
    }
    out
}

/// F1 × 100 of greedy same-class matching at IoU ≥ `tau`: each prediction,
/// in list order, takes the highest-IoU unmatched ground truth of its class.
pub fn segmental_f1(pred: &[Segment], gt: &[Segment], tau: f64) -> f64 {
    let mut used = vec![false; gt.len()];
    let mut tp = 0usize;
    for p in pred {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if used[j] || g.category != p.category {
                continue;
            }
            let iou = t_iou(p.interval(), g.interval());
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= tau {
                used[j] = true;
                tp += 1;
            }
        }
    }
    let precision = if pred.is_empty() { 0.0 } else { tp as f64 / pred.len() as f64 };
    let recall = if gt.is_empty() { 0.0 } else { tp as f64 / gt.len() as f64 };
    if precision + recall == 0.0 {
        return 0.0;
    }
    100.0 * 2.0 * precision * recall / (precision + recall)
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(1 − lev(pred, gt) / max(|pred|, |gt|)) × 100` over run-label sequences.
pub fn edit_score(pred: &[usize], gt: &[usize]) -> f64 {
    let n = pred.len().max(gt.len());
    if n == 0 {
        return 100.0;
    }
    (100.0 * (1.0 - levenshtein(pred, gt) as f64 / n as f64)).max(0.0)
}

/// Run labels of a per-token label sequence.
pub fn run_labels(labels: &[usize]) -> Vec<usize> {
    label_runs(labels).iter().map(|s| s.category).collect()
}

/// All-point interpolated AP from rank-ordered TP flags.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    tp.iter().zip(&precision).filter(|(t, _)| **t).map(|(_, p)| p).sum::<f64>() / n_gt as f64
}

/// Predictions and ground truth of one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSample {
    pub predictions: Vec<Segment>,
    pub ground_truth: Vec<Segment>,
}

/// Rank order for detection: higher score first, then earlier start, lower
/// class, earlier end, then sample and list position.
fn ranked(samples: &[DetectionSample], class: usize) -> Vec<(usize, Segment)> {
    let mut preds: Vec<(usize, usize, Segment)> = samples
        .iter()
        .enumerate()
        .flat_map(|(s, d)| d.predictions.iter().enumerate().filter(|(_, p)| p.category == class).map(move |(i, p)| (s, i, *p)))
        .collect();
    preds.sort_by(|a, b| {
        b.2.score
            .total_cmp(&a.2.score)
            .then(a.2.start.total_cmp(&b.2.start))
            .then(a.2.category.cmp(&b.2.category))
            .then(a.2.end.total_cmp(&b.2.end))
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    preds.into_iter().map(|(s, _, p)| (s, p)).collect()
}

/// AP of one class at one threshold, greedy by rank.
pub fn class_ap(samples: &[DetectionSample], class: usize, threshold: f64) -> Option<f64> {
    let n_gt: usize = samples.iter().map(|s| s.ground_truth.iter().filter(|g| g.category == class).count()).sum();
    if n_gt == 0 {
        return None;
    }
    let mut used: Vec<Vec<bool>> = samples.iter().map(|s| vec![false; s.ground_truth.len()]).collect();
    let tp: Vec<bool> = ranked(samples, class)
        .into_iter()
        .map(|(s, p)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in samples[s].ground_truth.iter().enumerate() {
                if used[s][j] || g.category != class {
                    continue;
                }
                let iou = t_iou(p.interval(), g.interval());
                if iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                used[s][j] = true;
            }
            best.is_some()
        })
        .collect();
    Some(average_precision(&tp, n_gt))
}

/// Mean over thresholds of the mean over classes (with ground truth) of AP.
/// Returns the overall value and one value per threshold.
pub fn detection_map(samples: &[DetectionSample], thresholds: &[f64]) -> (f64, Vec<f64>) {
    let mut classes: Vec<usize> = samples.iter().flat_map(|s| s.ground_truth.iter().map(|g| g.category)).collect();
    classes.sort_unstable();
    classes.dedup();
    let per: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            if classes.is_empty() {
                return 0.0;
            }
            classes.iter().filter_map(|&c| class_ap(samples, c, t)).sum::<f64>() / classes.len() as f64
        })
        .collect();
    let mean = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    (mean, per)
}

/// Fraction of samples with a top-`k` prediction at tIoU ≥ `m` to the
/// ground-truth interval.
pub fn rank_at_k(ranked: &[Vec<(f64, f64)>], gt: &[(f64, f64)], k: usize, m: f64) -> Result<f64> {
    if ranked.len() != gt.len() {
        return Err(shape_err("rank@k", format!("{} prediction lists, {} targets", ranked.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::Undefined("rank@k over zero samples".into()));
    }
    let hits = ranked
        .iter()
        .zip(gt)
        .filter(|(preds, &g)| preds.iter().take(k).any(|&p| t_iou(p, g) >= m))
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 of a candidate against a reference; 1 for two empty
/// sequences, 0 when exactly one is empty.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return if candidate.is_empty() && reference.is_empty() { 1.0 } else { 0.0 };
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, r) = (l / candidate.len() as f64, l / reference.len() as f64);
    2.0 * p * r / (p + r)
}
