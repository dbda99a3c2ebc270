//! Turning annotations into classifier inputs, and dataset directories.

use std::path::{Path, PathBuf};

use super::generate::{GeneratedDataset, ScenarioConfig};
use super::render::{render_feature_volume, RenderConfig};
use super::schema::{load, save, DatasetManifest, Style, VideoAnnotation, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::metrics::{FrameBox, TubeTrack};
use crate::par::{self, Execution};
use crate::pipeline::{segment_video, Background, Config, Sample, SnippetInput};
use crate::tube::{ActionTube, BBox, TUBE_LEN};

/// One tube per annotated track visible in the snippet. Frames the track
/// misses are filled with its nearest observed box.
pub fn snippet_tubes(video: &VideoAnnotation, snippet_index: usize) -> Vec<ActionTube> {
    let start = snippet_index * TUBE_LEN + 1;
    let end = start + TUBE_LEN - 1;
    video
        .tubes
        .iter()
        .filter_map(|t| {
            let seen: Vec<(usize, BBox)> = t.boxes.range(start..=end).filter_map(|(&f, _)| t.bbox(f).map(|b| (f, b))).collect();
            let first = seen.first()?.0;
            let boxes = (start..=end)
                .map(|f| seen.iter().min_by_key(|(g, _)| g.abs_diff(f)).map(|&(_, b)| b).expect("non-empty"))
                .collect();
            Some(ActionTube {
                id: t.id,
                snippet_index,
                first_frame: first,
                boxes,
                action_label: t.action_label,
                confidence: t.confidence,
            })
        })
        .collect()
}

/// Number of classifier outputs for `video` under `config`.
pub fn class_count(video: &VideoAnnotation, config: &Config) -> usize {
    video.activity_labels.len() + usize::from(config.background == Background::Present)
}

/// Ground-truth class of each full snippet: the activity covering most of
/// its frames (earliest on ties), else the background class.
pub fn snippet_labels(video: &VideoAnnotation, config: &Config) -> Result<Vec<usize>> {
    let background = (config.background == Background::Present).then_some(video.activity_labels.len());
    segment_video(video.n_frames, TUBE_LEN)
        .iter()
        .enumerate()
        .map(|(i, snip)| {
            let mut best: Option<(usize, usize)> = None;
            for a in &video.activities {
                let lo = a.interval.start_frame.max(snip.start_frame);
                let hi = a.interval.end_frame.min(snip.end_frame);
                let cover = if lo <= hi { hi - lo + 1 } else { 0 };
                if cover > 0 && best.is_none_or(|(_, c)| cover > c) {
                    best = Some((a.label as usize, cover));
                }
            }
            match (best, background) {
                (Some((l, c)), _) if 2 * c > TUBE_LEN || background.is_none() => Ok(l),
                (_, Some(b)) => Ok(b),
                (_, None) => Err(Error::Validation(format!(
                    "video {}: snippet {i} has no activity and the configuration has no background class",
                    video.video_id
                ))),
            }
        })
        .collect()
}

pub fn render_config(config: &Config) -> RenderConfig {
    RenderConfig {
        channels: config.channels,
        feature_size: config.feature_size,
        noise: config.feature_noise,
        seed: config.seed,
    }
}

/// Classifier inputs for every full snippet: features rendered from
/// `video`, tubes taken from `detections` (the same video's detector output).
pub fn video_inputs(video: &VideoAnnotation, detections: &VideoAnnotation, config: &Config, mode: Execution) -> Result<Vec<SnippetInput>> {
    if video.video_id != detections.video_id {
        return Err(Error::Validation(format!(
            "detections for {} paired with video {}",
            detections.video_id, video.video_id
        )));
    }
    let rc = render_config(config);
    let pool = config.pool_config();
    let n = video.n_frames / TUBE_LEN;
    par::map_range(mode, n, |i| {
        let fv = render_feature_volume(video, i, &rc)?;
        SnippetInput::new(i, fv, snippet_tubes(detections, i), &pool)
    })
    .into_iter()
    .collect()
}

pub fn video_samples(video: &VideoAnnotation, detections: &VideoAnnotation, config: &Config, mode: Execution) -> Result<Vec<Sample>> {
    let labels = snippet_labels(video, config)?;
    let inputs = video_inputs(video, detections, config, mode)?;
    Ok(inputs
        .into_iter()
        .zip(labels)
        .map(|(input, label)| Sample { input, label })
        .collect())
}

/// Checks the configuration's background setting against the data style.
pub fn check_style(video: &VideoAnnotation, config: &Config) -> Result<()> {
    let want = match video.style {
        Style::Road => Background::Present,
        Style::Saras => Background::Absent,
    };
    if config.background != want {
        return Err(Error::Config(format!(
            "video {} is {:?}-style but the configuration sets background = {:?}",
            video.video_id, video.style, config.background
        )));
    }
    Ok(())
}

/// Every box of every tube of `video`, tagged with `video_index`, for
/// frame-level evaluation. Scores are tube confidences.
pub fn frame_boxes(video_index: usize, video: &VideoAnnotation) -> Vec<FrameBox> {
    video
        .tubes
        .iter()
        .flat_map(|t| {
            t.boxes.keys().filter_map(move |&f| {
                t.bbox(f).map(|bbox| FrameBox {
                    video: video_index,
                    frame: f,
                    label: t.action_label as usize,
                    score: t.confidence,
                    bbox,
                })
            })
        })
        .collect()
}

/// Tubes of `video` as tracks for video-level evaluation.
pub fn tube_tracks(video_index: usize, video: &VideoAnnotation) -> Vec<TubeTrack> {
    video
        .tubes
        .iter()
        .map(|t| TubeTrack {
            video: video_index,
            label: t.action_label as usize,
            score: t.confidence,
            boxes: t.track(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A generated dataset on disk: `manifest.json`, `videos/<id>.json` and
/// `detections/<id>.json`.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

/// A video and the detections made on it.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPair {
    pub video: VideoAnnotation,
    pub detections: VideoAnnotation,
}

impl DatasetDir {
    pub fn video_path(root: &Path, id: &str) -> PathBuf {
        root.join("videos").join(format!("{id}.json"))
    }

    pub fn detections_path(root: &Path, id: &str) -> PathBuf {
        root.join("detections").join(format!("{id}.json"))
    }

    pub fn write(root: &Path, cfg: &ScenarioConfig, data: &GeneratedDataset) -> Result<DatasetDir> {
        let n_train = data.clean.len() - cfg.n_test.min(data.clean.len());
        let ids: Vec<String> = data.clean.iter().map(|v| v.video_id.clone()).collect();
        for (c, n) in data.clean.iter().zip(&data.noisy) {
            save(c, &Self::video_path(root, &c.video_id))?;
            save(n, &Self::detections_path(root, &n.video_id))?;
        }
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            scenario: cfg.clone(),
            train: ids[..n_train].to_vec(),
            test: ids[n_train..].to_vec(),
        };
        save(&manifest, &root.join("manifest.json"))?;
        Ok(DatasetDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn open(root: &Path) -> Result<DatasetDir> {
        Ok(DatasetDir {
            root: root.to_path_buf(),
            manifest: load(&root.join("manifest.json"))?,
        })
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.manifest.train,
            Split::Test => &self.manifest.test,
        }
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<VideoPair>> {
        self.ids(split)
            .iter()
            .map(|id| {
                Ok(VideoPair {
                    video: load(&Self::video_path(&self.root, id))?,
                    detections: load(&Self::detections_path(&self.root, id))?,
                })
            })
            .collect()
    }
}

/// Training samples of many videos, in video order.
pub fn samples(pairs: &[VideoPair], config: &Config, mode: Execution) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for p in pairs {
        check_style(&p.video, config)?;
        out.extend(video_samples(&p.video, &p.detections, config, mode)?);
    }
    Ok(out)
}
