//! Synthetic backbone features.
//!
//! Each annotated box adds a bump to channel `action_label mod C`: 1 at the
//! box centre, falling off bilinearly to 0 at the box edges. Uniform noise
//! of amplitude `noise` is added everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::VideoAnnotation;
use crate::deform::FeatureVolume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tube::TUBE_LEN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub channels: usize,
    /// Feature cells across the frame width.
    pub feature_size: usize,
    pub noise: f64,
    pub seed: u64,
}

/// FNV-1a, stable across platforms and releases.
fn stable_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Feature volume `(C, 12, H_f, W_f)` of snippet `snippet_index` (0-based).
/// Cell `(i, j)` sits at pixel `(j, i) / spatial_scale`.
pub fn render_feature_volume(video: &VideoAnnotation, snippet_index: usize, cfg: &RenderConfig) -> Result<FeatureVolume> {
    let start = snippet_index * TUBE_LEN + 1;
    if start + TUBE_LEN - 1 > video.n_frames {
        return Err(Error::InvalidArgument(format!(
            "snippet {snippet_index} extends past frame {} of {}",
            video.n_frames, video.video_id
        )));
    }
    if cfg.channels == 0 || cfg.feature_size == 0 {
        return Err(Error::InvalidArgument("feature volume needs channels and cells".into()));
    }
    let scale = cfg.feature_size as f64 / video.frame_width;
    let wf = cfg.feature_size;
    let hf = ((video.frame_height * scale).round() as usize).max(1);
    let plane = hf * wf;
    let mut data = vec![0.0; cfg.channels * TUBE_LEN * plane];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(&video.video_id));
    rng.set_stream(snippet_index as u64);
    if cfg.noise > 0.0 {
        for v in data.iter_mut() {
            *v = rng.random_range(-cfg.noise..=cfg.noise);
        }
    }

    for tube in &video.tubes {
        let channel = tube.action_label as usize % cfg.channels;
        for t in 0..TUBE_LEN {
            let Some(b) = tube.bbox(start + t) else { continue };
            let (cx, cy) = b.center();
            let (hw, hh) = (b.width() / 2.0, b.height() / 2.0);
            if hw <= 0.0 || hh <= 0.0 {
                continue;
            }
            let base = (channel * TUBE_LEN + t) * plane;
            let i0 = (b.y1 * scale).floor().max(0.0) as usize;
            let i1 = ((b.y2 * scale).ceil() as usize).min(hf - 1);
            let j0 = (b.x1 * scale).floor().max(0.0) as usize;
            let j1 = ((b.x2 * scale).ceil() as usize).min(wf - 1);
            for i in i0..=i1 {
                let v = 1.0 - ((i as f64 / scale - cy).abs() / hh);
                if v <= 0.0 {
                    continue;
                }
                for j in j0..=j1 {
                    let u = 1.0 - ((j as f64 / scale - cx).abs() / hw);
                    if u > 0.0 {
                        data[base + i * wf + j] += u * v;
                    }
                }
            }
        }
    }
    FeatureVolume::new(Tensor::new(vec![cfg.channels, TUBE_LEN, hf, wf], data)?, scale)
}
