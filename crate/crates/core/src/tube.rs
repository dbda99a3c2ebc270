//! Boxes, micro-tubes, snippet tubes, dynamic-programming tube linking and
//! the IoU family used by detection metrics.
//!
//! Frame indices are 1-based throughout, matching annotation files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per snippet tube.
pub const TUBE_LEN: usize = 12;
/// Frame gap between the two detections of a micro-tube.
pub const MICRO_TUBE_GAP: usize = 3;
/// Micro-tubes chained into one snippet tube.
pub const MICRO_TUBES_PER_TUBE: usize = 3;

/// Axis-aligned box in corner form, pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox::new(cx(self.x1), cy(self.y1), cx(self.x2), cy(self.y2))
    }

    /// Coordinate-wise `(1 − t)·self + t·other`. Coordinates equal at both
    /// ends are reproduced exactly, and the far corner never crosses the near
    /// one when both endpoint boxes are valid.
    pub fn lerp(&self, other: &BBox, t: f64) -> BBox {
        let f = |a: f64, b: f64| if a == b { a } else { (1.0 - t) * a + t * b };
        let x1 = f(self.x1, other.x1);
        let y1 = f(self.y1, other.y1);
        BBox::new(x1, y1, f(self.x2, other.x2).max(x1), f(self.y2, other.y2).max(y1))
    }
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// A pair of detections `gap` frames apart with per-class confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroTube {
    pub start_frame: usize,
    pub gap: usize,
    pub start_box: BBox,
    pub end_box: BBox,
    pub class_scores: Vec<f64>,
}

impl MicroTube {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.gap
    }
}

/// Boxes for every frame from `start_frame` to `start_frame + gap`,
/// linearly interpolated between the two endpoint detections. The endpoint
/// boxes are returned unchanged.
pub fn interpolate_micro_tube(mt: &MicroTube) -> Vec<(usize, BBox)> {
    let gap = mt.gap.max(1);
    let mut out = Vec::with_capacity(gap + 1);
    out.push((mt.start_frame, mt.start_box));
    for i in 1..gap {
        let t = i as f64 / gap as f64;
        out.push((mt.start_frame + i, mt.start_box.lerp(&mt.end_box, t)));
    }
    out.push((mt.start_frame + gap, mt.end_box));
    out
}

/// One atomic-action tube spanning a whole snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTube {
    pub id: u64,
    pub snippet_index: usize,
    /// First frame (1-based, absolute) in which the tube was observed.
    pub first_frame: usize,
    pub boxes: Vec<BBox>,
    pub action_label: u32,
    pub confidence: f64,
}

/// Label carried by the whole-frame placeholder tube of an empty snippet.
pub const PLACEHOLDER_LABEL: u32 = u32::MAX;

impl ActionTube {
    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != TUBE_LEN {
            return Err(Error::Validation(format!(
                "tube {} has {} boxes, expected {TUBE_LEN}",
                self.id,
                self.boxes.len()
            )));
        }
        if let Some(i) = self.boxes.iter().position(|b| !b.is_valid()) {
            return Err(Error::Validation(format!("tube {} has an invalid box at offset {i}", self.id)));
        }
        Ok(())
    }

    /// Whole-frame stand-in used when a snippet has no detections.
    pub fn placeholder(snippet_index: usize, first_frame: usize, width: f64, height: f64) -> Self {
        ActionTube {
            id: u64::MAX,
            snippet_index,
            first_frame,
            boxes: vec![BBox::new(0.0, 0.0, width, height); TUBE_LEN],
            action_label: PLACEHOLDER_LABEL,
            confidence: 1.0,
        }
    }

    pub fn is_placeholder(&self) -> bool {
        self.action_label == PLACEHOLDER_LABEL
    }

    /// Splits the tube back into its three micro-tubes (frame pairs
    /// (1,4), (5,8), (9,12) relative to the snippet start).
    pub fn to_micro_tubes(&self, snippet_start: usize, n_classes: usize) -> Vec<MicroTube> {
        let mut scores = vec![0.0; n_classes];
        if let Some(s) = scores.get_mut(self.action_label as usize) {
            *s = self.confidence;
        }
        (0..MICRO_TUBES_PER_TUBE)
            .map(|i| {
                let a = i * (MICRO_TUBE_GAP + 1);
                MicroTube {
                    start_frame: snippet_start + a,
                    gap: MICRO_TUBE_GAP,
                    start_box: self.boxes[a],
                    end_box: self.boxes[a + MICRO_TUBE_GAP],
                    class_scores: scores.clone(),
                }
            })
            .collect()
    }
}

/// Builds a 12-frame tube from a chain of three micro-tubes anchored at
/// `snippet_start`, `snippet_start + 4` and `snippet_start + 8`.
pub fn assemble_snippet_tube(chain: &[MicroTube], snippet_index: usize, snippet_start: usize, id: u64) -> Result<ActionTube> {
    if chain.len() != MICRO_TUBES_PER_TUBE {
        return Err(Error::Chain(format!(
            "expected {MICRO_TUBES_PER_TUBE} micro-tubes, got {}",
            chain.len()
        )));
    }
    let n_classes = chain[0].class_scores.len();
    if n_classes == 0 || chain.iter().any(|m| m.class_scores.len() != n_classes) {
        return Err(Error::Chain("inconsistent class score vectors".into()));
    }
    let mut boxes = Vec::with_capacity(TUBE_LEN);
    for (i, mt) in chain.iter().enumerate() {
        let expect = snippet_start + i * (MICRO_TUBE_GAP + 1);
        if mt.start_frame != expect || mt.gap != MICRO_TUBE_GAP {
            return Err(Error::Chain(format!(
                "micro-tube {i} covers frames {}..{}, expected {expect}..{}",
                mt.start_frame,
                mt.end_frame(),
                expect + MICRO_TUBE_GAP
            )));
        }
        boxes.extend(interpolate_micro_tube(mt).into_iter().map(|(_, b)| b));
    }
    let mean: Vec<f64> = (0..n_classes)
        .map(|c| chain.iter().map(|m| m.class_scores[c]).sum::<f64>() / chain.len() as f64)
        .collect();
    let (label, confidence) = argmax(&mean);
    Ok(ActionTube {
        id,
        snippet_index,
        first_frame: snippet_start,
        boxes,
        action_label: label as u32,
        confidence,
    })
}

/// Lowest index among the maxima.
pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
}

/// A linked sequence of micro-tubes for one class: `members[j]` is the
/// candidate index used at step `start_step + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeChain {
    pub class: usize,
    pub start_step: usize,
    pub members: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LinkConfig {
    /// Weight of the box-overlap continuity term.
    pub lambda: f64,
    /// Candidates whose class score is below this do not take part.
    pub min_score: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            lambda: 1.0,
            min_score: 0.0,
        }
    }
}

/// Path score accumulation shared by linking and its tests: scores are
/// folded left to right as `(acc + λ·iou) + score`.
#[inline]
pub(crate) fn link_step(acc: f64, lambda: f64, iou: f64, score: f64) -> f64 {
    (acc + lambda * iou) + score
}

/// Links per-step micro-tube candidates into class-specific chains.
///
/// For each class independently, the highest-scoring path (sum of class
/// scores plus `λ`·IoU between a micro-tube's end box and the next one's
/// start box) is found by Viterbi over every maximal run of consecutive
/// steps that still have candidates. The best path is emitted, its
/// candidates are removed, and the search repeats until nothing is left.
///
/// Ties prefer the higher-scoring path's earlier run, then the lowest end
/// candidate, then the lowest predecessor at every step.
pub fn link_micro_tubes(steps: &[Vec<MicroTube>], cfg: &LinkConfig) -> Vec<TubeChain> {
    let n_classes = steps.iter().flatten().map(|m| m.class_scores.len()).max().unwrap_or(0);
    let mut chains = Vec::new();
    for class in 0..n_classes {
        let score = |m: &MicroTube| m.class_scores.get(class).copied().unwrap_or(0.0);
        let mut alive: Vec<Vec<bool>> = steps
            .iter()
            .map(|s| s.iter().map(|m| score(m) >= cfg.min_score).collect())
            .collect();
        loop {
            let mut best: Option<TubeChain> = None;
            for (start, end) in live_runs(&alive) {
                let Some(path) = viterbi(steps, &alive, start, end, class, cfg) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| path.score > b.score) {
                    best = Some(path);
                }
            }
            let Some(chain) = best else { break };
            for (j, &m) in chain.members.iter().enumerate() {
                alive[chain.start_step + j][m] = false;
            }
            chains.push(chain);
        }
    }
    chains
}

/// Maximal runs `[start, end)` of steps with at least one live candidate.
pub(crate) fn live_runs(alive: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, step) in alive.iter().enumerate() {
        let live = step.iter().any(|&a| a);
        match (live, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, alive.len()));
    }
    runs
}

fn viterbi(steps: &[Vec<MicroTube>], alive: &[Vec<bool>], start: usize, end: usize, class: usize, cfg: &LinkConfig) -> Option<TubeChain> {
    let score = |m: &MicroTube| m.class_scores.get(class).copied().unwrap_or(0.0);
    let mut acc: Vec<Option<f64>> = steps[start].iter().zip(&alive[start]).map(|(m, &a)| a.then(|| score(m))).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(end - start);
    back.push(vec![0; acc.len()]);
    for t in start + 1..end {
        let mut next = Vec::with_capacity(steps[t].len());
        let mut ptr = Vec::with_capacity(steps[t].len());
        for (j, cand) in steps[t].iter().enumerate() {
            if !alive[t][j] {
                next.push(None);
                ptr.push(0);
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, prev) in steps[t - 1].iter().enumerate() {
                let Some(a) = acc[i] else { continue };
                let v = link_step(a, cfg.lambda, box_iou(&prev.end_box, &cand.start_box), score(cand));
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((i, v));
                }
            }
            let (i, v) = best?;
            next.push(Some(v));
            ptr.push(i);
        }
        acc = next;
        back.push(ptr);
    }
    let (mut j, total) =
        acc.iter()
            .enumerate()
            .filter_map(|(j, v)| v.map(|v| (j, v)))
            .fold(None, |best: Option<(usize, f64)>, (j, v)| match best {
                Some((_, bv)) if v <= bv => best,
                _ => Some((j, v)),
            })?;
    let mut members = vec![0; end - start];
    for t in (0..end - start).rev() {
        members[t] = j;
        j = back[t][j];
    }
    Some(TubeChain {
        class,
        start_step: start,
        members,
        score: total,
    })
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalInterval {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl TemporalInterval {
    pub fn new(start_frame: usize, end_frame: usize) -> Result<Self> {
        if start_frame > end_frame {
            return Err(Error::Validation(format!("interval start {start_frame} after end {end_frame}")));
        }
        Ok(TemporalInterval { start_frame, end_frame })
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn temporal_iou(a: &TemporalInterval, b: &TemporalInterval) -> f64 {
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame.min(b.end_frame);
    if lo > hi {
        return 0.0;
    }
    let inter = (hi - lo + 1) as f64;
    let union = (a.len() + b.len()) as f64 - inter;
    inter / union
}

/// Temporal IoU of the frame spans times the mean box IoU over the frames of
/// the temporal intersection; a frame missing from either tube counts as 0.
pub fn spatiotemporal_tube_iou(a: &BTreeMap<usize, BBox>, b: &BTreeMap<usize, BBox>) -> f64 {
    let span = |m: &BTreeMap<usize, BBox>| {
        let lo = *m.keys().next()?;
        let hi = *m.keys().next_back()?;
        Some(TemporalInterval {
            start_frame: lo,
            end_frame: hi,
        })
    };
    let (Some(sa), Some(sb)) = (span(a), span(b)) else {
        return 0.0;
    };
    let tiou = temporal_iou(&sa, &sb);
    if tiou == 0.0 {
        return 0.0;
    }
    let lo = sa.start_frame.max(sb.start_frame);
    let hi = sa.end_frame.min(sb.end_frame);
    let total: f64 = (lo..=hi)
        .map(|f| match (a.get(&f), b.get(&f)) {
            (Some(x), Some(y)) => box_iou(x, y),
            _ => 0.0,
        })
        .sum();
    tiou * total / (hi - lo + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    fn mt(start: usize, gap: usize, s: BBox, e: BBox, scores: Vec<f64>) -> MicroTube {
        MicroTube {
            start_frame: start,
            gap,
            start_box: s,
            end_box: e,
            class_scores: scores,
        }
    }

    #[test]
    fn box_iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_abs_diff_eq!(box_iou(&a, &b(5.0, 0.0, 15.0, 10.0)), 1.0 / 3.0, epsilon = 1e-15);
        let flat = b(1.0, 1.0, 1.0, 5.0);
        assert_eq!(box_iou(&flat, &flat), 0.0);
    }

    #[test]
    fn xywh_round_trip() {
        let bx = BBox::from_xywh(3.0, 4.0, 10.0, 2.0);
        assert_eq!(bx, b(3.0, 4.0, 13.0, 6.0));
        assert_eq!(bx.to_xywh(), [3.0, 4.0, 10.0, 2.0]);
    }

    #[test]
    fn interpolation_examples() {
        let out = interpolate_micro_tube(&mt(1, 3, b(0.0, 0.0, 10.0, 10.0), b(3.0, 0.0, 13.0, 10.0), vec![1.0]));
        assert_eq!(out.len(), 4);
        assert_eq!(out[0], (1, b(0.0, 0.0, 10.0, 10.0)));
        assert_eq!(out[1].0, 2);
        assert_abs_diff_eq!(out[1].1.x1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].1.x2, 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[2].1.x1, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[2].1.x2, 12.0, epsilon = 1e-12);
        assert_eq!(out[3], (4, b(3.0, 0.0, 13.0, 10.0)));

        let same = b(1.0, 2.0, 3.0, 4.0);
        let out = interpolate_micro_tube(&mt(7, 3, same, same, vec![1.0]));
        assert!(out.iter().all(|(_, bx)| *bx == same));

        let out = interpolate_micro_tube(&mt(1, 2, b(0.0, 0.0, 2.0, 2.0), b(4.0, 4.0, 10.0, 10.0), vec![1.0]));
        assert_eq!(out[1], (2, b(2.0, 2.0, 6.0, 6.0)));

        let out = interpolate_micro_tube(&mt(1, 1, same, b(2.0, 2.0, 5.0, 5.0), vec![1.0]));
        assert_eq!(out.len(), 2);
    }

    fn chain_from(boxes: &[BBox], snippet_start: usize, scores: Vec<f64>) -> Vec<MicroTube> {
        (0..3)
            .map(|i| {
                let a = i * 4;
                mt(snippet_start + a, 3, boxes[a], boxes[a + 3], scores.clone())
            })
            .collect()
    }

    #[test]
    fn assemble_examples() {
        let bx = b(5.0, 5.0, 20.0, 30.0);
        let tube = assemble_snippet_tube(&chain_from(&[bx; 12], 1, vec![0.1, 0.9]), 0, 1, 7).unwrap();
        assert_eq!(tube.boxes, vec![bx; 12]);
        assert_eq!(tube.action_label, 1);
        assert_abs_diff_eq!(tube.confidence, 0.9, epsilon = 1e-15);
        assert_eq!(tube.first_frame, 1);

        // global linear drift: x shifts by 1.5 px per frame
        let drift: Vec<BBox> = (0..12).map(|f| b(1.5 * f as f64, 0.0, 1.5 * f as f64 + 10.0, 8.0)).collect();
        let tube = assemble_snippet_tube(&chain_from(&drift, 13, vec![1.0]), 1, 13, 0).unwrap();
        for (got, want) in tube.boxes.iter().zip(&drift) {
            assert_abs_diff_eq!(got.x1, want.x1, epsilon = 1e-12);
            assert_abs_diff_eq!(got.x2, want.x2, epsilon = 1e-12);
        }
    }

    #[test]
    fn assemble_rejects_bad_chains() {
        let bx = b(0.0, 0.0, 1.0, 1.0);
        let mut chain = chain_from(&[bx; 12], 1, vec![1.0]);
        assert!(assemble_snippet_tube(&chain[..2], 0, 1, 0).is_err());
        chain[2].start_frame = 10;
        assert!(matches!(assemble_snippet_tube(&chain, 0, 1, 0), Err(Error::Chain(_))));
    }

    #[test]
    fn temporal_iou_examples() {
        let a = TemporalInterval::new(0, 9).unwrap();
        assert_eq!(temporal_iou(&a, &a), 1.0);
        assert_abs_diff_eq!(temporal_iou(&a, &TemporalInterval::new(5, 14).unwrap()), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(temporal_iou(&a, &TemporalInterval::new(10, 14).unwrap()), 0.0);
        assert!(TemporalInterval::new(3, 2).is_err());
    }

    fn tube_map(frames: std::ops::RangeInclusive<usize>, bx: BBox) -> BTreeMap<usize, BBox> {
        frames.map(|f| (f, bx)).collect()
    }

    #[test]
    fn tube_iou_examples() {
        let a = tube_map(0..=9, b(0.0, 0.0, 4.0, 4.0));
        assert_eq!(spatiotemporal_tube_iou(&a, &a), 1.0);
        assert_eq!(spatiotemporal_tube_iou(&a, &tube_map(0..=9, b(10.0, 10.0, 12.0, 12.0))), 0.0);
        assert_abs_diff_eq!(
            spatiotemporal_tube_iou(&a, &tube_map(0..=19, b(0.0, 0.0, 4.0, 4.0))),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(spatiotemporal_tube_iou(&a, &BTreeMap::new()), 0.0);
    }

    #[test]
    fn linking_single_candidate_per_step() {
        let bx = b(0.0, 0.0, 4.0, 4.0);
        let steps: Vec<Vec<MicroTube>> = (0..4).map(|t| vec![mt(1 + 4 * t, 3, bx, bx, vec![0.5])]).collect();
        let chains = link_micro_tubes(&steps, &LinkConfig::default());
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].members, vec![0; 4]);
        assert_eq!(chains[0].start_step, 0);
        assert_abs_diff_eq!(chains[0].score, 4.0 * 0.5 + 3.0, epsilon = 1e-12);
    }

    #[test]
    fn linking_keeps_parallel_tracks_apart() {
        let top = b(0.0, 0.0, 10.0, 10.0);
        let bottom = b(0.0, 50.0, 10.0, 60.0);
        // the candidate order alternates so that index-following would swap tracks
        let steps = vec![
            vec![mt(1, 3, top, top, vec![0.9]), mt(1, 3, bottom, bottom, vec![0.8])],
            vec![mt(5, 3, bottom, bottom, vec![0.9]), mt(5, 3, top, top, vec![0.8])],
            vec![mt(9, 3, top, top, vec![0.9]), mt(9, 3, bottom, bottom, vec![0.8])],
        ];
        let chains = link_micro_tubes(&steps, &LinkConfig::default());
        assert_eq!(chains.len(), 2);
        for c in &chains {
            let boxes: Vec<BBox> = c.members.iter().enumerate().map(|(t, &m)| steps[t][m].start_box).collect();
            assert!(boxes.iter().all(|bx| *bx == boxes[0]), "track swapped: {c:?}");
        }
    }

    #[test]
    fn linking_breaks_at_empty_steps() {
        let bx = b(0.0, 0.0, 4.0, 4.0);
        let steps = vec![
            vec![mt(1, 3, bx, bx, vec![0.5])],
            vec![mt(5, 3, bx, bx, vec![0.5])],
            vec![],
            vec![mt(13, 3, bx, bx, vec![0.5])],
        ];
        let chains = link_micro_tubes(&steps, &LinkConfig::default());
        assert_eq!(chains.len(), 2);
        assert_eq!((chains[0].start_step, chains[0].members.len()), (0, 2));
        assert_eq!((chains[1].start_step, chains[1].members.len()), (3, 1));
    }

    #[test]
    fn micro_tube_split_has_expected_anchors() {
        let boxes: Vec<BBox> = (0..12).map(|f| b(f as f64, 0.0, f as f64 + 1.0, 1.0)).collect();
        let tube = ActionTube {
            id: 0,
            snippet_index: 0,
            first_frame: 1,
            boxes: boxes.clone(),
            action_label: 0,
            confidence: 0.7,
        };
        let mts = tube.to_micro_tubes(1, 1);
        assert_eq!(
            mts.iter().map(|m| (m.start_frame, m.end_frame())).collect::<Vec<_>>(),
            vec![(1, 4), (5, 8), (9, 12)]
        );
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64).prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h))
    }

    proptest! {
        #[test]
        fn box_iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = box_iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, box_iou(&c, &a));
            if a.area() > 0.0 {
                prop_assert_eq!(box_iou(&a, &a), 1.0);
            }
            if v == 1.0 {
                prop_assert!(a.area() > 0.0);
            }
        }

        #[test]
        fn interpolation_preserves_endpoints_and_extent(s in arb_box(), e in arb_box(), gap in 1usize..8) {
            let out = interpolate_micro_tube(&mt(1, gap, s, e, vec![1.0]));
            prop_assert_eq!(out.len(), gap + 1);
            prop_assert_eq!(out[0].1, s);
            prop_assert_eq!(out[gap].1, e);
            for (_, bx) in &out {
                prop_assert!(bx.width() >= 0.0 && bx.height() >= 0.0);
            }
        }

        #[test]
        fn split_then_assemble_is_identity(boxes in prop::collection::vec(arb_box(), 12), start in 1usize..500) {
            // interior frames must themselves be linear for exact recovery
            let mut boxes = boxes;
            for i in 0..3 {
                let a = i * 4;
                for k in 1..3 {
                    boxes[a + k] = boxes[a].lerp(&boxes[a + 3], k as f64 / 3.0);
                }
            }
            let tube = ActionTube { id: 3, snippet_index: 0, first_frame: start, boxes: boxes.clone(), action_label: 1, confidence: 0.6 };
            let back = assemble_snippet_tube(&tube.to_micro_tubes(start, 2), 0, start, 3).unwrap();
            prop_assert_eq!(back.boxes, boxes);
            prop_assert_eq!(back.action_label, 1);
        }

        #[test]
        fn temporal_iou_bounded(a in 0usize..50, la in 0usize..30, c in 0usize..50, lc in 0usize..30) {
            let x = TemporalInterval::new(a, a + la).unwrap();
            let y = TemporalInterval::new(c, c + lc).unwrap();
            let v = temporal_iou(&x, &y);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, temporal_iou(&y, &x));
        }
    }
}
