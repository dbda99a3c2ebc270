//! Standard, deformable and modulated-deformable 3D RoI pooling over action
//! tubes.
//!
//! A tube contributes one `k × k` grid of bins per frame. Every bin averages
//! `n_s × n_s` bilinear samples taken at regular interior points. In the
//! deformable variants each bin's samples are translated by
//! `(γ·Δx̂·w, γ·Δŷ·h)` where `(Δx̂, Δŷ)` is a learned normalised offset and
//! `(w, h)` the tube box size in feature-grid units; the modulated variant
//! additionally scales the bin by a learned factor in `[0, 1]`.
//!
//! Pooled features for `K` tubes are laid out as a `[K, C·L·k·k]` matrix,
//! row-major over `(channel, frame, bin row, bin column)`. Offsets are
//! `[K, L·k·k·2]` over `(frame, bin row, bin column, {x, y})`, modulation
//! `[K, L·k·k]`; with shared offsets the frame axis is dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};
use crate::tube::{ActionTube, BBox, TUBE_LEN};

/// Per-snippet backbone features, shape `(C, M, H_f, W_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub values: Tensor,
    /// Feature-grid cells per input pixel.
    pub spatial_scale: f64,
}

impl FeatureVolume {
    pub fn new(values: Tensor, spatial_scale: f64) -> Result<Self> {
        if values.shape().len() != 4 {
            return Err(Error::shape("feature volume", values.shape(), &[0, 0, 0, 0]));
        }
        if !(spatial_scale > 0.0 && spatial_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spatial_scale must be positive, got {spatial_scale}"
            )));
        }
        Ok(FeatureVolume { values, spatial_scale })
    }

    pub fn dims(&self) -> VolumeDims {
        VolumeDims::from_shape(self.values.shape(), self.spatial_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeDims {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub spatial_scale: f64,
}

impl VolumeDims {
    fn from_shape(shape: &[usize], spatial_scale: f64) -> Self {
        VolumeDims {
            channels: shape[0],
            frames: shape[1],
            height: shape[2],
            width: shape[3],
            spatial_scale,
        }
    }

    /// Input frame size in pixels, `(width, height)`.
    pub fn image_size(&self) -> (f64, f64) {
        (self.width as f64 / self.spatial_scale, self.height as f64 / self.spatial_scale)
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn channel_stride(&self) -> usize {
        self.frames * self.plane()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Standard,
    Deformable,
    Modulated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    /// Bins per side.
    pub bins: usize,
    /// Samples per bin per axis.
    pub samples: usize,
    /// Offset magnitude scale.
    pub gamma: f64,
    /// One offset set per tube instead of one per frame.
    pub shared_offsets: bool,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            bins: 7,
            samples: 2,
            gamma: 0.1,
            shared_offsets: false,
        }
    }
}

impl PoolConfig {
    /// Width of one pooled tube row for `channels` feature channels.
    pub fn pooled_len(&self, channels: usize) -> usize {
        channels * TUBE_LEN * self.bins * self.bins
    }

    /// Bins carrying an independent offset (per tube).
    pub fn offset_bins(&self) -> usize {
        let frames = if self.shared_offsets { 1 } else { TUBE_LEN };
        frames * self.bins * self.bins
    }
}

/// Up to four bilinear taps: `(index within frame plane, weight, ∂w/∂x, ∂w/∂y)`.
#[derive(Default)]
struct Taps {
    n: usize,
    idx: [usize; 4],
    w: [f64; 4],
    dx: [f64; 4],
    dy: [f64; 4],
}

impl Taps {
    /// Taps for point `(x, y)` in grid coordinates; cells outside the grid
    /// read as zero and are omitted.
    fn at(x: f64, y: f64, height: usize, width: usize) -> Taps {
        let mut taps = Taps::default();
        if !(x.is_finite() && y.is_finite()) {
            return taps;
        }
        let (xf, yf) = (x.floor(), y.floor());
        let (ax, ay) = (x - xf, y - yf);
        let corners = [
            (0.0, 0.0, (1.0 - ax) * (1.0 - ay), -(1.0 - ay), -(1.0 - ax)),
            (1.0, 0.0, ax * (1.0 - ay), 1.0 - ay, -ax),
            (0.0, 1.0, (1.0 - ax) * ay, -ay, 1.0 - ax),
            (1.0, 1.0, ax * ay, ay, ax),
        ];
        for (ox, oy, w, dx, dy) in corners {
            let cx = xf + ox;
            let cy = yf + oy;
            if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
                continue;
            }
            let k = taps.n;
            taps.idx[k] = cy as usize * width + cx as usize;
            taps.w[k] = w;
            taps.dx[k] = dx;
            taps.dy[k] = dy;
            taps.n += 1;
        }
        taps
    }
}

/// Bilinear interpolation of every channel of `frame` at `(x, y)`, with
/// zero padding outside the grid. Differentiable in the features and in
/// `coords = [x, y]`.
pub fn bilinear_sample(tape: &mut Tape, features: Var, frame: usize, coords: Var) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("bilinear_sample", &shape, &[0, 0, 0, 0]));
    }
    if tape.value(coords).numel() != 2 {
        return Err(Error::shape("bilinear_sample", &shape, tape.shape(coords)));
    }
    let dims = VolumeDims::from_shape(&shape, 1.0);
    if frame >= dims.frames {
        return Err(Error::InvalidArgument(format!("frame {frame} outside {} frames", dims.frames)));
    }
    let xy = tape.value(coords).data();
    let taps = Taps::at(xy[0], xy[1], dims.height, dims.width);
    let feat = tape.value(features).data();
    let out: Vec<f64> = (0..dims.channels)
        .map(|c| {
            let base = c * dims.channel_stride() + frame * dims.plane();
            (0..taps.n).map(|i| taps.w[i] * feat[base + taps.idx[i]]).sum()
        })
        .collect();
    let out = Tensor::new(vec![dims.channels], out)?;
    Ok(tape.custom(&[features, coords], out, Box::new(BilinearOp { frame, dims })))
}

struct BilinearOp {
    frame: usize,
    dims: VolumeDims,
}

impl CustomOp for BilinearOp {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (feat, xy) = (inputs[0].data(), inputs[1].data());
        let d = self.dims;
        let taps = Taps::at(xy[0], xy[1], d.height, d.width);
        let mut gf = needs[0].then(|| vec![0.0; feat.len()]);
        let (mut gx, mut gy) = (0.0, 0.0);
        for (c, &gc) in g.iter().enumerate() {
            let base = c * d.channel_stride() + self.frame * d.plane();
            for i in 0..taps.n {
                let v = feat[base + taps.idx[i]];
                gx += gc * v * taps.dx[i];
                gy += gc * v * taps.dy[i];
                if let Some(gf) = gf.as_mut() {
                    gf[base + taps.idx[i]] += gc * taps.w[i];
                }
            }
        }
        vec![gf, needs[1].then(|| vec![gx, gy])]
    }
}

/// Tube boxes clamped to the frame and mapped to feature-grid units.
fn grid_boxes(tubes: &[ActionTube], dims: &VolumeDims) -> Result<Vec<Vec<BBox>>> {
    let (iw, ih) = dims.image_size();
    if dims.frames != TUBE_LEN {
        return Err(Error::InvalidArgument(format!(
            "feature volume has {} frames, tubes have {TUBE_LEN}",
            dims.frames
        )));
    }
    tubes
        .iter()
        .map(|t| {
            t.validate()?;
            Ok(t.boxes
                .iter()
                .map(|b| {
                    let c = b.clamp_to(iw, ih);
                    let s = dims.spatial_scale;
                    BBox::new(c.x1 * s, c.y1 * s, c.x2 * s, c.y2 * s)
                })
                .collect())
        })
        .collect()
}

/// Shared geometry of one pooling call, used by forward and backward.
struct PoolPlan {
    dims: VolumeDims,
    cfg: PoolConfig,
    boxes: Vec<Vec<BBox>>,
}

impl PoolPlan {
    fn row_len(&self) -> usize {
        self.cfg.pooled_len(self.dims.channels)
    }

    fn offset_bin(&self, t: usize, by: usize, bx: usize) -> usize {
        let k = self.cfg.bins;
        let tf = if self.cfg.shared_offsets { 0 } else { t };
        (tf * k + by) * k + bx
    }

    /// Visits every (tube, frame, bin, sample) with its bilinear taps.
    /// `shift(r, offset_bin)` yields the offset translation scale inputs.
    fn for_each_sample(&self, offsets: Option<&[f64]>, mut visit: impl FnMut(usize, usize, usize, usize, &Taps, f64, f64)) {
        let k = self.cfg.bins;
        let n = self.cfg.samples;
        let ob = self.cfg.offset_bins();
        for (r, frames) in self.boxes.iter().enumerate() {
            for (t, b) in frames.iter().enumerate() {
                let (bw, bh) = (b.width(), b.height());
                let (step_x, step_y) = (bw / k as f64, bh / k as f64);
                for by in 0..k {
                    for bx in 0..k {
                        let o = self.offset_bin(t, by, bx);
                        let (sx, sy) = match offsets {
                            Some(off) => {
                                let base = (r * ob + o) * 2;
                                (self.cfg.gamma * off[base] * bw, self.cfg.gamma * off[base + 1] * bh)
                            }
                            None => (0.0, 0.0),
                        };
                        for iy in 0..n {
                            let y = b.y1 + (by as f64 + (iy as f64 + 0.5) / n as f64) * step_y + sy;
                            for ix in 0..n {
                                let x = b.x1 + (bx as f64 + (ix as f64 + 0.5) / n as f64) * step_x + sx;
                                let taps = Taps::at(x, y, self.dims.height, self.dims.width);
                                visit(r, t, by * k + bx, o, &taps, bw, bh);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Unmodulated bin means, `[K, C·L·k·k]`.
    fn forward(&self, feat: &[f64], offsets: Option<&[f64]>) -> Vec<f64> {
        let d = self.dims;
        let kk = self.cfg.bins * self.cfg.bins;
        let row = self.row_len();
        let inv = 1.0 / (self.cfg.samples * self.cfg.samples) as f64;
        let mut out = vec![0.0; self.boxes.len() * row];
        self.for_each_sample(offsets, |r, t, bin, _, taps, _, _| {
            for c in 0..d.channels {
                let base = c * d.channel_stride() + t * d.plane();
                let v: f64 = (0..taps.n).map(|i| taps.w[i] * feat[base + taps.idx[i]]).sum();
                out[r * row + (c * TUBE_LEN + t) * kk + bin] += v * inv;
            }
        });
        out
    }
}

fn check_rows(tape: &Tape, v: Var, rows: usize, cols: usize, what: &'static str) -> Result<()> {
    let shape = tape.shape(v);
    if shape != [rows, cols] {
        return Err(Error::shape(what, shape, &[rows, cols]));
    }
    Ok(())
}

fn pool(
    tape: &mut Tape,
    features: Var,
    spatial_scale: f64,
    tubes: &[ActionTube],
    cfg: &PoolConfig,
    offsets: Option<Var>,
    modulation: Option<Var>,
) -> Result<Var> {
    if tubes.is_empty() {
        return Err(Error::InvalidArgument("no tubes to pool".into()));
    }
    if cfg.bins == 0 || cfg.samples == 0 {
        return Err(Error::InvalidArgument("bins and samples must be positive".into()));
    }
    let shape = tape.shape(features).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("roi_pool_3d", &shape, &[0, 0, 0, 0]));
    }
    let dims = VolumeDims::from_shape(&shape, spatial_scale);
    let plan = PoolPlan {
        dims,
        cfg: *cfg,
        boxes: grid_boxes(tubes, &dims)?,
    };
    let k_tubes = tubes.len();
    if let Some(o) = offsets {
        check_rows(tape, o, k_tubes, cfg.offset_bins() * 2, "offsets")?;
    }
    if let Some(m) = modulation {
        check_rows(tape, m, k_tubes, cfg.offset_bins(), "modulation")?;
    }

    let feat = tape.value(features).data();
    let off = offsets.map(|o| tape.value(o).data());
    let mut out = plan.forward(feat, off);
    if let Some(m) = modulation {
        let mv = tape.value(m).data();
        modulate(&plan, &mut out, mv);
    }
    let out = Tensor::new(vec![k_tubes, plan.row_len()], out)?;

    let mut inputs = vec![features];
    inputs.extend(offsets);
    inputs.extend(modulation);
    let op = RoiPoolOp {
        plan,
        has_offsets: offsets.is_some(),
        has_modulation: modulation.is_some(),
    };
    Ok(tape.custom(&inputs, out, Box::new(op)))
}

fn modulate(plan: &PoolPlan, out: &mut [f64], modulation: &[f64]) {
    let k = plan.cfg.bins;
    let kk = k * k;
    let row = plan.row_len();
    let ob = plan.cfg.offset_bins();
    for r in 0..plan.boxes.len() {
        for c in 0..plan.dims.channels {
            for t in 0..TUBE_LEN {
                for bin in 0..kk {
                    let o = plan.offset_bin(t, bin / k, bin % k);
                    out[r * row + (c * TUBE_LEN + t) * kk + bin] *= modulation[r * ob + o];
                }
            }
        }
    }
}

struct RoiPoolOp {
    plan: PoolPlan,
    has_offsets: bool,
    has_modulation: bool,
}

impl CustomOp for RoiPoolOp {
    fn name(&self) -> &'static str {
        "roi_pool_3d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let plan = &self.plan;
        let d = plan.dims;
        let k = plan.cfg.bins;
        let kk = k * k;
        let row = plan.row_len();
        let ob = plan.cfg.offset_bins();
        let inv = 1.0 / (plan.cfg.samples * plan.cfg.samples) as f64;
        let gamma = plan.cfg.gamma;

        let feat = inputs[0].data();
        let off_idx = self.has_offsets.then_some(1);
        let mod_idx = self.has_modulation.then(|| 1 + usize::from(self.has_offsets));
        let off = off_idx.map(|i| inputs[i].data());
        let modv = mod_idx.map(|i| inputs[i].data());

        let need_feat = needs[0];
        let need_off = off_idx.is_some_and(|i| needs[i]);
        let need_mod = mod_idx.is_some_and(|i| needs[i]);

        // gradient w.r.t. the unmodulated bin means
        let g_raw: Vec<f64> = match modv {
            Some(m) => {
                let mut gr = g.to_vec();
                modulate(plan, &mut gr, m);
                gr
            }
            None => g.to_vec(),
        };

        let mut g_feat = need_feat.then(|| vec![0.0; feat.len()]);
        let mut g_off = need_off.then(|| vec![0.0; plan.boxes.len() * ob * 2]);
        if need_feat || need_off {
            plan.for_each_sample(off, |r, t, bin, o, taps, bw, bh| {
                let (mut sx, mut sy) = (0.0, 0.0);
                for c in 0..d.channels {
                    let gc = g_raw[r * row + (c * TUBE_LEN + t) * kk + bin] * inv;
                    if gc == 0.0 {
                        continue;
                    }
                    let base = c * d.channel_stride() + t * d.plane();
                    for i in 0..taps.n {
                        let cell = base + taps.idx[i];
                        if let Some(gf) = g_feat.as_mut() {
                            gf[cell] += gc * taps.w[i];
                        }
                        sx += gc * feat[cell] * taps.dx[i];
                        sy += gc * feat[cell] * taps.dy[i];
                    }
                }
                if let Some(go) = g_off.as_mut() {
                    let base = (r * ob + o) * 2;
                    go[base] += sx * gamma * bw;
                    go[base + 1] += sy * gamma * bh;
                }
            });
        }

        let g_mod = need_mod.then(|| {
            let raw = plan.forward(feat, off);
            let mut gm = vec![0.0; plan.boxes.len() * ob];
            for r in 0..plan.boxes.len() {
                for c in 0..d.channels {
                    for t in 0..TUBE_LEN {
                        for bin in 0..kk {
                            let i = r * row + (c * TUBE_LEN + t) * kk + bin;
                            gm[r * ob + plan.offset_bin(t, bin / k, bin % k)] += g[i] * raw[i];
                        }
                    }
                }
            }
            gm
        });

        let mut grads = vec![g_feat];
        if self.has_offsets {
            grads.push(g_off);
        }
        if self.has_modulation {
            grads.push(g_mod);
        }
        grads
    }
}

/// Average RoI pooling of every tube over the `k × k` bin grid of each frame.
/// Returns `[K, C·L·k·k]`.
pub fn roi_pool_3d(tape: &mut Tape, features: Var, spatial_scale: f64, tubes: &[ActionTube], cfg: &PoolConfig) -> Result<Var> {
    pool(tape, features, spatial_scale, tubes, cfg, None, None)
}

/// RoI pooling with every bin's sample points translated by its offset
/// scaled by `γ` and the box size.
pub fn deformable_roi_pool_3d(
    tape: &mut Tape,
    features: Var,
    spatial_scale: f64,
    tubes: &[ActionTube],
    offsets: Var,
    cfg: &PoolConfig,
) -> Result<Var> {
    pool(tape, features, spatial_scale, tubes, cfg, Some(offsets), None)
}

/// Deformable pooling with each bin multiplied by its modulation scalar.
pub fn modulated_deformable_roi_pool_3d(
    tape: &mut Tape,
    features: Var,
    spatial_scale: f64,
    tubes: &[ActionTube],
    offsets: Var,
    modulation: Var,
    cfg: &PoolConfig,
) -> Result<Var> {
    pool(tape, features, spatial_scale, tubes, cfg, Some(offsets), Some(modulation))
}

/// Standard pooling without a tape, for features that need no gradient.
pub fn pool_standard(fv: &FeatureVolume, tubes: &[ActionTube], cfg: &PoolConfig) -> Result<Tensor> {
    let dims = fv.dims();
    let plan = PoolPlan {
        dims,
        cfg: *cfg,
        boxes: grid_boxes(tubes, &dims)?,
    };
    let out = plan.forward(fv.values.data(), None);
    Tensor::new(vec![tubes.len(), plan.row_len()], out)
}

/// Fully-connected offset predictor weights. `modulation` is present only
/// for the modulated variant.
#[derive(Debug, Clone, Copy)]
pub struct OffsetVars {
    pub weight: Var,
    pub bias: Var,
    pub modulation: Option<(Var, Var)>,
}

/// Offsets (and modulation, through a sigmoid) predicted from standard-pooled
/// tube features `[K, C·L·k·k]`.
pub fn predict_offsets(tape: &mut Tape, pooled: Var, params: &OffsetVars) -> Result<(Var, Option<Var>)> {
    let offsets = tape.linear(pooled, params.weight, params.bias)?;
    let modulation = match params.modulation {
        Some((w, b)) => {
            let raw = tape.linear(pooled, w, b)?;
            Some(tape.sigmoid(raw))
        }
        None => None,
    };
    Ok((offsets, modulation))
}

/// Offsets for a single tube in `(frame, bin row, bin column, {x, y})` order,
/// with optional modulation in `(frame, bin row, bin column)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub offsets: Tensor,
    pub modulation: Option<Tensor>,
}

impl OffsetField {
    /// Splits batched predictions into per-tube fields shaped
    /// `(L', k, k, 2)` and `(L', k, k)`, where `L'` is 1 for shared offsets.
    pub fn split(offsets: &Tensor, modulation: Option<&Tensor>, cfg: &PoolConfig) -> Result<Vec<OffsetField>> {
        let frames = if cfg.shared_offsets { 1 } else { TUBE_LEN };
        let k = cfg.bins;
        let ob = cfg.offset_bins();
        let rows = offsets.shape()[0];
        (0..rows)
            .map(|r| {
                let o = offsets.data()[r * ob * 2..(r + 1) * ob * 2].to_vec();
                let m = modulation
                    .map(|m| Tensor::new(vec![frames, k, k], m.data()[r * ob..(r + 1) * ob].to_vec()))
                    .transpose()?;
                Ok(OffsetField {
                    offsets: Tensor::new(vec![frames, k, k, 2], o)?,
                    modulation: m,
                })
            })
            .collect()
    }
}
