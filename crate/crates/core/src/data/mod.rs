//! Annotation files, synthetic scenarios and dataset directories.

mod dataset;
pub mod generate;
pub mod render;
pub mod schema;

pub use dataset::{
    check_style, class_count, frame_boxes, render_config, samples, snippet_labels, snippet_tubes, tube_tracks, video_inputs, video_samples,
    DatasetDir, Split, VideoPair,
};
pub use generate::{generate_scenarios, ActivityTemplate, GeneratedDataset, NoiseConfig, ScenarioConfig};
pub use render::{render_feature_volume, RenderConfig};
pub use schema::{
    from_json_str, load, save, to_json_string, DatasetManifest, DetectionFile, GraphFile, MetricsFile, Schema, SnippetGraph, Style, Task,
    TrainingLog, TubeAnnotation, VideoAnnotation, VideoDetections, VideoGraphs, SCHEMA_VERSION,
};
