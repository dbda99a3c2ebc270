//! Snippet segmentation, per-snippet classification, dual-verification
//! smoothing, segment extraction and training.

mod config;
mod model;
mod train;

pub use config::{Background, Config};
pub use model::{Model, SnippetInput, SnippetOutput};
pub use train::{accuracy, train, EpochLog, Sample, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::par::{self, Execution};
use crate::tensor::Tape;
use crate::tube::TemporalInterval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnippetPrediction {
    pub snippet_index: usize,
    pub label: usize,
    pub probabilities: Vec<f64>,
    pub node_count: usize,
}

/// A labelled frame interval, used both for ground truth and detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySegment {
    pub label: u32,
    pub interval: TemporalInterval,
    pub score: f64,
}

/// Consecutive, non-overlapping snippets of `snippet_len` frames (1-based,
/// inclusive); a trailing partial snippet is dropped.
pub fn segment_video(n_frames: usize, snippet_len: usize) -> Vec<TemporalInterval> {
    if snippet_len == 0 {
        return Vec::new();
    }
    (0..n_frames / snippet_len)
        .map(|i| TemporalInterval {
            start_frame: i * snippet_len + 1,
            end_frame: (i + 1) * snippet_len,
        })
        .collect()
}

/// Single left-to-right pass absorbing isolated flips: a label that differs
/// from its (already smoothed) predecessor is overwritten by it when the
/// next label agrees with the predecessor.
pub fn smooth_labels(labels: &[usize]) -> Vec<usize> {
    let mut out = labels.to_vec();
    for i in 1..labels.len().saturating_sub(1) {
        if out[i] != out[i - 1] && labels[i + 1] == out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    out
}

/// Maximal runs of equal labels as segments scored by the mean probability
/// of their class over the run. Runs of `background` are not emitted.
pub fn extract_segments(
    labels: &[usize],
    probabilities: &[Vec<f64>],
    snippet_len: usize,
    background: Option<usize>,
) -> Result<Vec<ActivitySegment>> {
    if labels.len() != probabilities.len() {
        return Err(Error::shape("extract_segments", &[labels.len()], &[probabilities.len()]));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < labels.len() {
        let label = labels[start];
        let mut end = start;
        while end + 1 < labels.len() && labels[end + 1] == label {
            end += 1;
        }
        if Some(label) != background {
            let mut score = 0.0;
            for p in &probabilities[start..=end] {
                score += *p.get(label).ok_or(Error::TargetOutOfRange {
                    target: label,
                    n_class: p.len(),
                })?;
            }
            out.push(ActivitySegment {
                label: label as u32,
                interval: TemporalInterval {
                    start_frame: start * snippet_len + 1,
                    end_frame: (end + 1) * snippet_len,
                },
                score: score / (end - start + 1) as f64,
            });
        }
        start = end + 1;
    }
    Ok(out)
}

/// Background class id under `config` for `n_classes` outputs: the last one
/// when present.
pub fn background_class(config: &Config, n_classes: usize) -> Option<usize> {
    match config.background {
        Background::Present => Some(n_classes - 1),
        Background::Absent => None,
    }
}

/// Classifies every snippet with frozen parameters, in parallel over chunks
/// of `batch_size` snippets. Returns predictions and the scene graphs.
pub fn classify_video(model: &Model, inputs: &[SnippetInput], mode: Execution) -> Result<Vec<(SnippetPrediction, SceneGraph)>> {
    let chunks: Vec<&[SnippetInput]> = inputs.chunks(model.config.batch_size).collect();
    let results = par::map(mode, &chunks, |chunk| -> Result<Vec<(SnippetPrediction, SceneGraph)>> {
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let refs: Vec<&SnippetInput> = chunk.iter().collect();
        let outs = model.forward(&mut tape, &vars, &refs)?;
        Ok(chunk
            .iter()
            .zip(outs)
            .map(|(s, o)| {
                (
                    SnippetPrediction {
                        snippet_index: s.snippet_index,
                        label: o.label,
                        probabilities: o.probabilities,
                        node_count: s.node_count(),
                    },
                    o.graph,
                )
            })
            .collect())
    });
    let mut out = Vec::with_capacity(inputs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Smoothing and segment extraction over a video's snippet predictions.
pub fn localize(model: &Model, preds: &[SnippetPrediction]) -> Result<Vec<ActivitySegment>> {
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probabilities.clone()).collect();
    extract_segments(
        &smooth_labels(&labels),
        &probs,
        model.config.snippet_len,
        background_class(&model.config, model.n_classes),
    )
}

/// Classification, smoothing and segment extraction for one video.
pub fn detect_activities(
    model: &Model,
    inputs: &[SnippetInput],
    mode: Execution,
) -> Result<(Vec<SnippetPrediction>, Vec<ActivitySegment>)> {
    let preds: Vec<SnippetPrediction> = classify_video(model, inputs, mode)?.into_iter().map(|(p, _)| p).collect();
    let segments = localize(model, &preds)?;
    Ok((preds, segments))
}
