//! Versioned JSON file formats.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::metrics::{ClassificationReport, MapResult};
use crate::pipeline::{ActivitySegment, Config, EpochLog, SnippetPrediction};
use crate::tube::BBox;

use super::generate::ScenarioConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// A file format with an explicit `schema_version` and semantic checks.
pub trait Schema: Serialize + DeserializeOwned {
    fn schema_version(&self) -> u32;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Driving scenes; frames outside activities are background.
    Road,
    /// Surgical phases tiling the whole video.
    Saras,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeAnnotation {
    pub id: u64,
    pub action_label: u32,
    pub confidence: f64,
    /// Frame (1-based) → `[x, y, w, h]` in pixels.
    pub boxes: BTreeMap<usize, [f64; 4]>,
}

impl TubeAnnotation {
    pub fn bbox(&self, frame: usize) -> Option<BBox> {
        self.boxes.get(&frame).map(|&[x, y, w, h]| BBox::from_xywh(x, y, w, h))
    }

    pub fn track(&self) -> BTreeMap<usize, BBox> {
        self.boxes.keys().filter_map(|&f| self.bbox(f).map(|b| (f, b))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoAnnotation {
    pub schema_version: u32,
    pub video_id: String,
    pub style: Style,
    pub n_frames: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub action_labels: Vec<String>,
    pub activity_labels: Vec<String>,
    pub tubes: Vec<TubeAnnotation>,
    pub activities: Vec<ActivitySegment>,
}

/// Slack for boxes touching the frame border after float arithmetic.
const BOUNDS_EPS: f64 = 1e-9;

impl Schema for VideoAnnotation {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("video {}: {msg}", self.video_id)));
        if self.n_frames == 0 || !(self.frame_width > 0.0) || !(self.frame_height > 0.0) {
            return bad("empty video or frame".into());
        }
        for t in &self.tubes {
            if t.action_label as usize >= self.action_labels.len() {
                return bad(format!("tube {} has unknown action label {}", t.id, t.action_label));
            }
            if !(0.0..=1.0).contains(&t.confidence) {
                return bad(format!("tube {} confidence {} outside [0, 1]", t.id, t.confidence));
            }
            for (&frame, &[x, y, w, h]) in &t.boxes {
                if frame == 0 || frame > self.n_frames {
                    return bad(format!("tube {} frame {frame} outside 1..={}", t.id, self.n_frames));
                }
                if !(w >= 0.0 && h >= 0.0) {
                    return bad(format!("tube {} frame {frame}: negative box size ({w}, {h})", t.id));
                }
                if !(x >= -BOUNDS_EPS
                    && y >= -BOUNDS_EPS
                    && x + w <= self.frame_width + BOUNDS_EPS
                    && y + h <= self.frame_height + BOUNDS_EPS)
                {
                    return bad(format!("tube {} frame {frame}: box outside the frame", t.id));
                }
            }
        }
        let mut segs: Vec<&ActivitySegment> = self.activities.iter().collect();
        segs.sort_by_key(|s| s.interval.start_frame);
        for s in &segs {
            if s.label as usize >= self.activity_labels.len() {
                return bad(format!("activity label {} unknown", s.label));
            }
            if s.interval.start_frame == 0 || s.interval.end_frame > self.n_frames || s.interval.start_frame > s.interval.end_frame {
                return bad(format!(
                    "activity {}..{} outside 1..={}",
                    s.interval.start_frame, s.interval.end_frame, self.n_frames
                ));
            }
        }
        for w in segs.windows(2) {
            if w[1].interval.start_frame <= w[0].interval.end_frame {
                return bad(format!("activities overlap at frame {}", w[1].interval.start_frame));
            }
        }
        if self.style == Style::Saras {
            let mut next = 1;
            for s in &segs {
                if s.interval.start_frame != next {
                    return bad(format!("phases leave frame {next} uncovered"));
                }
                next = s.interval.end_frame + 1;
            }
            if next != self.n_frames + 1 {
                return bad(format!("phases leave frame {next} uncovered"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoDetections {
    pub video_id: String,
    pub n_frames: usize,
    pub snippets: Vec<SnippetPrediction>,
    pub segments: Vec<ActivitySegment>,
}

/// Output of `detect`: per-snippet predictions and localised activities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub schema_version: u32,
    pub activity_labels: Vec<String>,
    /// Index of the background class in snippet predictions, if any.
    pub background_class: Option<usize>,
    pub videos: Vec<VideoDetections>,
}

impl Schema for DetectionFile {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnippetGraph {
    pub snippet_index: usize,
    pub graph: SceneGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoGraphs {
    pub video_id: String,
    pub snippets: Vec<SnippetGraph>,
}

/// Scene graphs dumped by `detect --dump-graphs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub schema_version: u32,
    pub videos: Vec<VideoGraphs>,
}

impl Schema for GraphFile {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn validate(&self) -> Result<()> {
        for v in &self.videos {
            for s in &v.snippets {
                let n = s.graph.nodes.len();
                let a = &s.graph.adjacency;
                if a.len() != n || a.iter().any(|r| r.len() != n) {
                    return Err(Error::Validation(format!(
                        "video {} snippet {}: adjacency is not {n}×{n}",
                        v.video_id, s.snippet_index
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Temporal,
    Frame,
    Video,
    Classify,
}

/// Output of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub task: Task,
    pub class_names: Vec<String>,
    /// Primary AP protocol; the interpolated variant is reported alongside.
    pub ap_protocol: String,
    pub map: Vec<MapResult>,
    pub classification: Option<ClassificationReport>,
}

impl Schema for MetricsFile {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

/// Written by `train` next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingLog {
    pub schema_version: u32,
    pub config: Config,
    pub n_classes: usize,
    pub parameter_count: usize,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

impl Schema for TrainingLog {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

/// Index of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Schema for DatasetManifest {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Parses `text` as `T`, checking the schema version before the body so a
/// version mismatch is reported as such.
pub fn from_json_str<T: Schema>(text: &str, path: &Path) -> Result<T> {
    let parse = |e| Error::Parse {
        path: path.to_path_buf(),
        source: e,
    };
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse)?;
    if let Some(found) = probe.schema_version {
        if found != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                found,
                expected: SCHEMA_VERSION,
            });
        }
    }
    let value: T = serde_json::from_str(text).map_err(parse)?;
    value.validate()?;
    Ok(value)
}

pub fn to_json_string<T: Schema>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("schema types serialize");
    s.push('\n');
    s
}

pub fn load<T: Schema>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text, path)
}

pub fn save<T: Schema>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}
