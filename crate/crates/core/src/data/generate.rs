//! Synthetic scenario generator.
//!
//! A video is a sequence of activity segments aligned to snippet
//! boundaries. Every segment of activity `a` carries one tube per atomic
//! action of `a`'s template, moving linearly for the whole segment. Driving
//! scenes separate activities with background stretches holding unrelated
//! tubes; surgical videos are tiled by phases. The noisy copy stands in for
//! detector output: boxes are jittered, tubes dropped and labels flipped.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::schema::{Style, TubeAnnotation, VideoAnnotation, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::pipeline::ActivitySegment;
use crate::tube::{TemporalInterval, TUBE_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityTemplate {
    pub name: String,
    /// Multiset of atomic action labels present throughout the activity.
    pub actions: Vec<u32>,
    /// Tubes appear left to right in template order.
    pub ordered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation in pixels of the jitter added to x, y, w and h.
    pub jitter_sigma: f64,
    pub drop_prob: f64,
    pub flip_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub style: Style,
    pub n_videos: usize,
    /// The last `n_test` videos form the test split.
    pub n_test: usize,
    pub snippets_per_video: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub min_segment_snippets: usize,
    pub max_segment_snippets: usize,
    /// Longest background stretch (driving style only).
    pub max_gap_snippets: usize,
    /// Most tubes a single snippet may hold.
    pub max_tubes: usize,
    pub action_labels: Vec<String>,
    pub grammar: Vec<ActivityTemplate>,
    /// Actions drawn for background tubes.
    pub background_actions: Vec<u32>,
    pub noise: NoiseConfig,
    pub seed: u64,
}

fn template(name: &str, actions: &[u32], ordered: bool) -> ActivityTemplate {
    ActivityTemplate {
        name: name.into(),
        actions: actions.to_vec(),
        ordered,
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| (*s).to_string()).collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::road()
    }
}

impl ScenarioConfig {
    /// Six driving activities over eleven atomic actions.
    pub fn road() -> Self {
        ScenarioConfig {
            style: Style::Road,
            n_videos: 50,
            n_test: 10,
            snippets_per_video: 8,
            frame_width: 300.0,
            frame_height: 300.0,
            min_segment_snippets: 2,
            max_segment_snippets: 3,
            max_gap_snippets: 2,
            max_tubes: 6,
            action_labels: names(&[
                "av-move",
                "av-stop",
                "vehicle-stopped",
                "vehicle-moving",
                "traffic-light-red",
                "traffic-light-green",
                "pedestrian-crossing",
                "cyclist-crossing",
                "bus-merging",
                "pedestrian-on-road",
                "pedestrian-emerging",
            ]),
            grammar: vec![
                template("negotiating-intersection", &[1, 5, 2, 3], true),
                template("negotiating-pedestrian-crossing", &[1, 4, 6, 7], false),
                template("waiting-in-queue", &[1, 2, 2, 4], true),
                template("merging-into-vehicle-lane", &[1, 8, 3], true),
                template("sudden-appearance", &[0, 10], false),
                template("walking-in-middle-of-road", &[1, 9], false),
            ],
            background_actions: vec![0, 3],
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }

    /// Eight surgical phases over twelve atomic actions.
    pub fn saras() -> Self {
        ScenarioConfig {
            style: Style::Saras,
            max_gap_snippets: 0,
            action_labels: names(&[
                "tool-retraction",
                "blunt-dissection",
                "cutting",
                "suction",
                "coagulation",
                "clipping",
                "fat-removal",
                "bladder-retraction",
                "needle-grasping",
                "needle-puncturing",
                "knot-tying",
                "catheter-insertion",
            ]),
            grammar: vec![
                template("bladder-mobilization", &[0, 1, 7], false),
                template("afp-dissection", &[6, 3, 0], false),
                template("bladder-neck-transection", &[2, 7, 4], true),
                template("nvb-dissection", &[1, 5, 4], false),
                template("seminal-vesicle-exposure", &[6, 1, 3], true),
                template("urethral-division", &[2, 11], false),
                template("prostate-liberation", &[0, 2, 5], false),
                template("vesicourethral-anastomosis", &[8, 9, 10], true),
            ],
            background_actions: Vec::new(),
            ..ScenarioConfig::road()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let NoiseConfig {
            jitter_sigma,
            drop_prob,
            flip_prob,
        } = self.noise;
        if !(jitter_sigma >= 0.0 && jitter_sigma.is_finite()) {
            return bad(format!("jitter_sigma must be non-negative, got {jitter_sigma}"));
        }
        for (name, p) in [("drop_prob", drop_prob), ("flip_prob", flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.grammar.is_empty() {
            return bad("grammar is empty".into());
        }
        if self.n_test > self.n_videos {
            return bad(format!("n_test {} exceeds n_videos {}", self.n_test, self.n_videos));
        }
        if self.snippets_per_video == 0 || self.min_segment_snippets == 0 || self.min_segment_snippets > self.max_segment_snippets {
            return bad("segment lengths must satisfy 0 < min <= max and videos need snippets".into());
        }
        if !(self.frame_width >= 16.0 && self.frame_height >= 16.0) {
            return bad("frames must be at least 16 pixels per side".into());
        }
        let n_actions = self.action_labels.len() as u32;
        for t in &self.grammar {
            if t.actions.is_empty() {
                return bad(format!("template {} has no actions", t.name));
            }
            if t.actions.len() > self.max_tubes {
                return Err(Error::Config(format!(
                    "template {} needs {} simultaneous tubes, max_tubes is {}",
                    t.name,
                    t.actions.len(),
                    self.max_tubes
                )));
            }
            if let Some(a) = t.actions.iter().find(|&&a| a >= n_actions) {
                return bad(format!("template {} uses unknown action {a}", t.name));
            }
        }
        if let Some(a) = self.background_actions.iter().find(|&&a| a >= n_actions) {
            return bad(format!("unknown background action {a}"));
        }
        if self.style == Style::Road && self.background_actions.is_empty() {
            return bad("driving style needs background actions".into());
        }
        if self.style == Style::Saras && self.grammar.len() < 2 {
            return bad("surgical style needs at least two phases".into());
        }
        Ok(())
    }

    /// Default scenario of `style`.
    pub fn preset(style: Style) -> Self {
        match style {
            Style::Road => ScenarioConfig::road(),
            Style::Saras => ScenarioConfig::saras(),
        }
    }

    /// Reads a TOML scenario. Keys left out take the values of the preset
    /// named by `style` (driving when absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let given: toml::Table = text.parse().map_err(|e| bad(&e))?;
        let style = match given.get("style") {
            Some(v) => v.clone().try_into::<Style>().map_err(|e| bad(&e))?,
            None => Style::Road,
        };
        let mut merged = toml::Table::try_from(ScenarioConfig::preset(style)).map_err(|e| bad(&e))?;
        merged.extend(given);
        let cfg: ScenarioConfig = merged.try_into().map_err(|e| bad(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScenarioConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn activity_labels(&self) -> Vec<String> {
        self.grammar.iter().map(|t| t.name.clone()).collect()
    }

    pub fn video_id(&self, index: usize) -> String {
        let prefix = match self.style {
            Style::Road => "road",
            Style::Saras => "saras",
        };
        format!("{prefix}-{index:04}")
    }
}

/// Clean annotations and their noisy detection counterparts, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub clean: Vec<VideoAnnotation>,
    pub noisy: Vec<VideoAnnotation>,
}

/// Generates every video independently from `(seed, index)`, so the output
/// does not depend on the execution mode.
pub fn generate_scenarios(cfg: &ScenarioConfig, mode: Execution) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let pairs = par::map_range(mode, cfg.n_videos, |i| {
        let clean = generate_video(cfg, i);
        let noisy = add_noise(cfg, &clean, i);
        (clean, noisy)
    });
    let (clean, noisy) = pairs.into_iter().unzip();
    Ok(GeneratedDataset { clean, noisy })
}

fn video_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index as u64) << 1 | stream);
    rng
}

/// Snippet runs `(first snippet, length, activity or None for background)`.
fn layout(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, Option<u32>)> {
    let n = cfg.snippets_per_video;
    let n_act = cfg.grammar.len() as u32;
    let mut runs = Vec::new();
    let mut at = 0;
    let mut prev: Option<u32> = None;
    if cfg.style == Style::Road && cfg.max_gap_snippets > 0 {
        let gap = rng.random_range(0..=cfg.max_gap_snippets).min(n);
        if gap > 0 {
            runs.push((0, gap, None));
            at = gap;
        }
    }
    while at < n {
        let len = rng.random_range(cfg.min_segment_snippets..=cfg.max_segment_snippets).min(n - at);
        let label = loop {
            let l = rng.random_range(0..n_act);
            if cfg.style == Style::Road || Some(l) != prev {
                break l;
            }
        };
        runs.push((at, len, Some(label)));
        prev = Some(label);
        at += len;
        if cfg.style == Style::Road && at < n && cfg.max_gap_snippets > 0 {
            let gap = rng.random_range(1..=cfg.max_gap_snippets).min(n - at);
            runs.push((at, gap, None));
            at += gap;
        }
    }
    runs
}

fn clamp_box(cfg: &ScenarioConfig, [x, y, w, h]: [f64; 4]) -> [f64; 4] {
    let w = w.clamp(1.0, cfg.frame_width);
    let h = h.clamp(1.0, cfg.frame_height);
    [x.clamp(0.0, cfg.frame_width - w), y.clamp(0.0, cfg.frame_height - h), w, h]
}

/// Linearly moving box over `frames`, horizontally inside `slot` of
/// `slots` equal columns.
fn moving_tube(
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    id: u64,
    label: u32,
    frames: TemporalInterval,
    slot: usize,
    slots: usize,
) -> TubeAnnotation {
    let (fw, fh) = (cfg.frame_width, cfg.frame_height);
    let col = fw / slots as f64;
    let w = rng.random_range(0.5..0.9) * col.min(0.3 * fw);
    let h = rng.random_range(0.15..0.35) * fh;
    let endpoint = |rng: &mut ChaCha8Rng| {
        let cx = col * (slot as f64 + rng.random_range(0.35..0.65));
        let cy = rng.random_range(h / 2.0..fh - h / 2.0);
        [cx - w / 2.0, cy - h / 2.0]
    };
    let a = endpoint(rng);
    let b = endpoint(rng);
    let span = (frames.end_frame - frames.start_frame).max(1) as f64;
    let boxes = (frames.start_frame..=frames.end_frame)
        .map(|f| {
            let t = (f - frames.start_frame) as f64 / span;
            let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, w, h];
            (f, clamp_box(cfg, p))
        })
        .collect();
    TubeAnnotation {
        id,
        action_label: label,
        confidence: 1.0,
        boxes,
    }
}

fn generate_video(cfg: &ScenarioConfig, index: usize) -> VideoAnnotation {
    let mut rng = video_rng(cfg.seed, index, 0);
    let mut tubes = Vec::new();
    let mut activities = Vec::new();
    let mut next_id = 0u64;
    for (start, len, label) in layout(cfg, &mut rng) {
        let frames = TemporalInterval {
            start_frame: start * TUBE_LEN + 1,
            end_frame: (start + len) * TUBE_LEN,
        };
        let actions: Vec<u32> = match label {
            Some(l) => {
                activities.push(ActivitySegment {
                    label: l,
                    interval: frames,
                    score: 1.0,
                });
                let t = &cfg.grammar[l as usize];
                let mut a = t.actions.clone();
                if !t.ordered {
                    use rand::seq::SliceRandom;
                    a.shuffle(&mut rng);
                }
                a
            }
            None => {
                let n = rng.random_range(1..=2.min(cfg.max_tubes));
                (0..n)
                    .map(|_| cfg.background_actions[rng.random_range(0..cfg.background_actions.len())])
                    .collect()
            }
        };
        let slots = actions.len();
        for (slot, &action) in actions.iter().enumerate() {
            tubes.push(moving_tube(cfg, &mut rng, next_id, action, frames, slot, slots));
            next_id += 1;
        }
    }
    VideoAnnotation {
        schema_version: SCHEMA_VERSION,
        video_id: cfg.video_id(index),
        style: cfg.style,
        n_frames: cfg.snippets_per_video * TUBE_LEN,
        frame_width: cfg.frame_width,
        frame_height: cfg.frame_height,
        action_labels: cfg.action_labels.clone(),
        activity_labels: cfg.activity_labels(),
        tubes,
        activities,
    }
}

fn add_noise(cfg: &ScenarioConfig, clean: &VideoAnnotation, index: usize) -> VideoAnnotation {
    let NoiseConfig {
        jitter_sigma,
        drop_prob,
        flip_prob,
    } = cfg.noise;
    let mut rng = video_rng(cfg.seed, index, 1);
    let normal = Normal::new(0.0, jitter_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let n_actions = cfg.action_labels.len() as u32;
    let mut tubes = Vec::with_capacity(clean.tubes.len());
    for t in &clean.tubes {
        // draws happen unconditionally so one knob does not reshuffle another
        let drop = rng.random::<f64>() < drop_prob;
        let flip = rng.random::<f64>() < flip_prob && n_actions > 1;
        let shift = rng.random_range(1..n_actions.max(2));
        if drop {
            continue;
        }
        let mut t = t.clone();
        if flip {
            t.action_label = (t.action_label + shift) % n_actions;
        }
        if jitter_sigma > 0.0 {
            let boxes: BTreeMap<usize, [f64; 4]> = t
                .boxes
                .iter()
                .map(|(&f, &[x, y, w, h])| {
                    let mut j = || normal.sample(&mut rng);
                    (f, clamp_box(cfg, [x + j(), y + j(), w + j(), h + j()]))
                })
                .collect();
            t.boxes = boxes;
        }
        tubes.push(t);
    }
    VideoAnnotation { tubes, ..clean.clone() }
}
