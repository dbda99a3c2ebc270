//! Classification and detection metrics: per-class precision/recall/F1,
//! average precision with greedy score-ordered matching, and temporal,
//! frame and video mAP.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::pipeline::ActivitySegment;
use crate::tube::{box_iou, spatiotemporal_tube_iou, temporal_iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Macro averages over classes that occur in the predictions or the
    /// ground truth.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(predictions: &[usize], truth: &[usize], n_classes: usize) -> Result<ClassificationReport> {
    if predictions.len() != truth.len() {
        return Err(Error::shape("classification_report", &[predictions.len()], &[truth.len()]));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("classification report of no samples".into()));
    }
    if let Some(&c) = predictions.iter().chain(truth).find(|&&c| c >= n_classes) {
        return Err(Error::TargetOutOfRange {
            target: c,
            n_class: n_classes,
        });
    }
    let mut tp = vec![0; n_classes];
    let mut support = vec![0; n_classes];
    let mut predicted = vec![0; n_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        support[t] += 1;
        predicted[p] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[c],
                predicted: predicted[c],
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support + m.predicted > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
    Ok(ClassificationReport {
        accuracy: ratio(tp.iter().sum(), predictions.len()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    })
}

/// Scored detections of one class with their match outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// `(score, is_true_positive)` in input order.
    pub detections: Vec<(f64, bool)>,
    pub n_ground_truth: usize,
}

impl MatchResult {
    /// Indices by descending score, true positives first among equal scores,
    /// then input order.
    fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.detections.len()).collect();
        idx.sort_by(|&a, &b| {
            let (sa, ta) = self.detections[a];
            let (sb, tb) = self.detections[b];
            sb.total_cmp(&sa).then(tb.cmp(&ta))
        });
        idx
    }

    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.1).count()
    }
}

/// Sum of the precision at every true-positive rank divided by the number
/// of ground truths. `None` when the class has neither ground truth nor
/// detections.
pub fn average_precision(m: &MatchResult) -> Option<f64> {
    if m.n_ground_truth == 0 {
        return (!m.detections.is_empty()).then_some(0.0);
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, i) in m.ranking().into_iter().enumerate() {
        if m.detections[i].1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / m.n_ground_truth as f64)
}

/// 101-point interpolated AP (COCO style) over the same ranking.
pub fn average_precision_interpolated(m: &MatchResult) -> Option<f64> {
    if m.n_ground_truth == 0 {
        return (!m.detections.is_empty()).then_some(0.0);
    }
    let mut prec = Vec::with_capacity(m.detections.len());
    let mut rec = Vec::with_capacity(m.detections.len());
    let mut hits = 0usize;
    for (rank, i) in m.ranking().into_iter().enumerate() {
        if m.detections[i].1 {
            hits += 1;
        }
        prec.push(hits as f64 / (rank + 1) as f64);
        rec.push(hits as f64 / m.n_ground_truth as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let at = rec.partition_point(|&x| x < level);
        total += prec.get(at).copied().unwrap_or(0.0);
    }
    Some(total / 101.0)
}

/// Greedy matching of one class: detections in descending score (input
/// order among equals) each claim the unmatched ground truth of highest IoU
/// (lowest index among equals) provided that IoU is at least `delta`.
pub fn greedy_match(scores: &[f64], n_ground_truth: usize, iou: impl Fn(usize, usize) -> f64, delta: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut taken = vec![false; n_ground_truth];
    let mut tp = vec![false; scores.len()];
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &used) in taken.iter().enumerate() {
            if used {
                continue;
            }
            let v = iou(d, g);
            if v >= delta && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[d] = true;
        }
    }
    MatchResult {
        detections: scores.iter().copied().zip(tp).collect(),
        n_ground_truth,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapResult {
    pub iou_threshold: f64,
    /// Precision-at-true-positive-rank AP per class; `None` for classes
    /// with neither ground truth nor detections.
    pub per_class_ap: Vec<Option<f64>>,
    /// Mean over classes with ground truth.
    pub map: f64,
    /// The same under 101-point interpolation.
    pub per_class_ap_interpolated: Vec<Option<f64>>,
    pub map_interpolated: f64,
}

fn summarize(delta: f64, matches: &[MatchResult]) -> MapResult {
    let ap: Vec<Option<f64>> = matches.iter().map(average_precision).collect();
    let api: Vec<Option<f64>> = matches.iter().map(average_precision_interpolated).collect();
    let mean = |v: &[Option<f64>]| {
        let with_gt: Vec<f64> = v
            .iter()
            .zip(matches)
            .filter(|(_, m)| m.n_ground_truth > 0)
            .map(|(a, _)| a.unwrap_or(0.0))
            .collect();
        if with_gt.is_empty() {
            0.0
        } else {
            with_gt.iter().sum::<f64>() / with_gt.len() as f64
        }
    };
    MapResult {
        iou_threshold: delta,
        map: mean(&ap),
        map_interpolated: mean(&api),
        per_class_ap: ap,
        per_class_ap_interpolated: api,
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("IoU threshold must lie in (0, 1], got {delta}")))
    }
}

/// Matches per class over items grouped by video; IoU across videos is 0.
fn map_by_class<D, G>(
    detections: &[(usize, D)],
    truths: &[(usize, G)],
    class_of_det: impl Fn(&D) -> usize,
    class_of_gt: impl Fn(&G) -> usize,
    score: impl Fn(&D) -> f64,
    iou: impl Fn(&D, &G) -> f64,
    n_classes: usize,
    delta: f64,
) -> Result<MapResult> {
    check_delta(delta)?;
    let matches: Vec<MatchResult> = (0..n_classes)
        .map(|c| {
            let dets: Vec<&(usize, D)> = detections.iter().filter(|(_, d)| class_of_det(d) == c).collect();
            let gts: Vec<&(usize, G)> = truths.iter().filter(|(_, g)| class_of_gt(g) == c).collect();
            let scores: Vec<f64> = dets.iter().map(|(_, d)| score(d)).collect();
            greedy_match(
                &scores,
                gts.len(),
                |i, j| {
                    let (vd, d) = dets[i];
                    let (vg, g) = gts[j];
                    if vd == vg {
                        iou(d, g)
                    } else {
                        0.0
                    }
                },
                delta,
            )
        })
        .collect();
    Ok(summarize(delta, &matches))
}

/// Temporal detection mAP; `detections[v]` and `ground_truth[v]` belong to
/// video `v`.
pub fn temporal_detection_map(
    detections: &[Vec<ActivitySegment>],
    ground_truth: &[Vec<ActivitySegment>],
    n_classes: usize,
    delta: f64,
) -> Result<MapResult> {
    if detections.len() != ground_truth.len() {
        return Err(Error::shape("temporal_detection_map", &[detections.len()], &[ground_truth.len()]));
    }
    let flat = |v: &[Vec<ActivitySegment>]| -> Vec<(usize, ActivitySegment)> {
        v.iter()
            .enumerate()
            .flat_map(|(i, segs)| segs.iter().map(move |s| (i, *s)))
            .collect()
    };
    map_by_class(
        &flat(detections),
        &flat(ground_truth),
        |d| d.label as usize,
        |g| g.label as usize,
        |d| d.score,
        |d, g| temporal_iou(&d.interval, &g.interval),
        n_classes,
        delta,
    )
}

/// One box of one frame; `score` is ignored for ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBox {
    pub video: usize,
    pub frame: usize,
    pub label: usize,
    pub score: f64,
    pub bbox: BBox,
}

pub fn frame_map(detections: &[FrameBox], ground_truth: &[FrameBox], n_classes: usize, delta: f64) -> Result<MapResult> {
    // each (video, frame) pair is one image
    let mut keys: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for b in detections.iter().chain(ground_truth) {
        let n = keys.len();
        keys.entry((b.video, b.frame)).or_insert(n);
    }
    let tag = |v: &[FrameBox]| -> Vec<(usize, FrameBox)> { v.iter().map(|b| (keys[&(b.video, b.frame)], *b)).collect() };
    map_by_class(
        &tag(detections),
        &tag(ground_truth),
        |d| d.label,
        |g| g.label,
        |d| d.score,
        |d, g| box_iou(&d.bbox, &g.bbox),
        n_classes,
        delta,
    )
}

/// A tube as a frame → box map; `score` is ignored for ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeTrack {
    pub video: usize,
    pub label: usize,
    pub score: f64,
    pub boxes: BTreeMap<usize, BBox>,
}

pub fn video_map(detections: &[TubeTrack], ground_truth: &[TubeTrack], n_classes: usize, delta: f64) -> Result<MapResult> {
    let tag = |v: &[TubeTrack]| -> Vec<(usize, TubeTrack)> { v.iter().map(|t| (t.video, t.clone())).collect() };
    map_by_class(
        &tag(detections),
        &tag(ground_truth),
        |d| d.label,
        |g| g.label,
        |d| d.score,
        |d, g| spatiotemporal_tube_iou(&d.boxes, &g.boxes),
        n_classes,
        delta,
    )
}

/// Evaluates `f` at every threshold, in parallel when enabled.
pub fn sweep<F>(mode: Execution, thresholds: &[f64], f: F) -> Result<Vec<MapResult>>
where
    F: Fn(f64) -> Result<MapResult> + Sync + Send,
{
    par::map(mode, thresholds, |&d| f(d)).into_iter().collect()
}

/// Plain-text table with one row per class and one column per threshold.
pub fn format_map_table(title: &str, class_names: &[String], results: &[MapResult]) -> String {
    let width = class_names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:width$}", "class");
    for r in results {
        let _ = write!(out, "  δ={:<5}", r.iou_threshold);
    }
    out.push('\n');
    for (c, name) in class_names.iter().enumerate() {
        let _ = write!(out, "{name:width$}");
        for r in results {
            match r.per_class_ap.get(c).copied().flatten() {
                Some(ap) => {
                    let _ = write!(out, "  {:>7.2}", 100.0 * ap);
                }
                None => {
                    let _ = write!(out, "  {:>7}", "-");
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:width$}", "mAP");
    for r in results {
        let _ = write!(out, "  {:>7.2}", 100.0 * r.map);
    }
    out.push('\n');
    out
}

pub fn format_classification_table(class_names: &[String], report: &ClassificationReport) -> String {
    let width = class_names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:width$}  precision  recall     f1  support", "class");
    for (name, m) in class_names.iter().zip(&report.per_class) {
        let _ = writeln!(
            out,
            "{name:width$}  {:>9.3}  {:>6.3}  {:>5.3}  {:>7}",
            m.precision, m.recall, m.f1, m.support
        );
    }
    let _ = writeln!(
        out,
        "{:width$}  {:>9.3}  {:>6.3}  {:>5.3}",
        "macro", report.macro_precision, report.macro_recall, report.macro_f1
    );
    let _ = writeln!(out, "accuracy {:.4}", report.accuracy);
    out
}
