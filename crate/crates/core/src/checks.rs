//! Finite-difference gradient suite over every differentiable operation.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::{
    bilinear_sample, deformable_roi_pool_3d, modulated_deformable_roi_pool_3d, predict_offsets, roi_pool_3d, OffsetVars, PoolConfig,
};
use crate::error::Result;
use crate::gcn::{classify_snippet, gcn_layer_forward, graph_readout, normalize_adjacency, LayerVars, Readout};
use crate::par::{self, Execution};
use crate::tensor::{check_gradients_at, Tape, Tensor, Var};
use crate::tube::{ActionTube, BBox, TUBE_LEN};

/// Largest acceptable relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    /// Worst relative error over every seed and input.
    pub max_error: f64,
    /// Seed that produced `max_error`.
    pub worst_seed: u64,
}

#[derive(Debug, Clone)]
pub struct GradSuiteReport {
    pub seeds: usize,
    pub checks: Vec<GradCheck>,
    pub elapsed: Duration,
}

impl GradSuiteReport {
    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_error < GRAD_TOLERANCE)
    }
}

type Check = fn(u64) -> f64;

const CHECKS: [(&str, Check); 8] = [
    ("bilinear_sample", check_bilinear),
    ("roi_pool_3d", check_standard_pool),
    ("deformable_roi_pool_3d", check_deformable_pool),
    ("modulated_deformable_roi_pool_3d", check_modulated_pool),
    ("predict_offsets", check_offset_predictor),
    ("gcn_layer", check_gcn_layer),
    ("graph_readout", check_readout),
    ("classify_snippet", check_classifier),
];

/// Runs every check on seeds `0..seeds`.
pub fn gradient_suite(seeds: usize, mode: Execution) -> GradSuiteReport {
    let start = Instant::now();
    let checks = CHECKS
        .iter()
        .map(|&(name, f)| {
            let errs = par::map_range(mode, seeds, |s| f(s as u64));
            let (worst_seed, max_error) = errs
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (s, &e)| if e > acc.1 || e.is_nan() { (s as u64, e) } else { acc });
            GradCheck {
                name,
                max_error,
                worst_seed,
            }
        })
        .collect();
    GradSuiteReport {
        seeds,
        checks,
        elapsed: start.elapsed(),
    }
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(salt);
    r
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// `Σ r ⊙ v` with a fixed random `r`, so every output element matters.
fn weighted_sum(tape: &mut Tape, v: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let m = tape.mul(v, rv)?;
    Ok(tape.sum(m))
}

/// A handful of flat coordinates of a tensor with `n` entries.
fn some_coords(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

const SCALE: f64 = 0.5;
const GRID: usize = 6;
const CHANNELS: usize = 2;

fn pool_cfg() -> PoolConfig {
    PoolConfig {
        bins: 2,
        samples: 2,
        gamma: 0.5,
        shared_offsets: false,
    }
}

fn random_tubes(n: usize, rng: &mut ChaCha8Rng) -> Vec<ActionTube> {
    let side = GRID as f64 / SCALE;
    (0..n)
        .map(|id| ActionTube {
            id: id as u64,
            snippet_index: 0,
            first_frame: 1,
            boxes: (0..TUBE_LEN)
                .map(|_| {
                    let x = rng.random_range(0.0..side / 2.0);
                    let y = rng.random_range(0.0..side / 2.0);
                    let w = rng.random_range(2.0..side / 2.0);
                    let h = rng.random_range(2.0..side / 2.0);
                    BBox::new(x, y, x + w, y + h)
                })
                .collect(),
            action_label: 0,
            confidence: 1.0,
        })
        .collect()
}

struct PoolCase {
    features: Tensor,
    tubes: Vec<ActionTube>,
    offsets: Tensor,
    modulation: Tensor,
    weights: Tensor,
    cfg: PoolConfig,
}

fn pool_case(seed: u64) -> PoolCase {
    let mut r = rng(seed, 1);
    let cfg = pool_cfg();
    let tubes = random_tubes(2, &mut r);
    let ob = cfg.offset_bins();
    PoolCase {
        features: random(&[CHANNELS, TUBE_LEN, GRID, GRID], -1.0, 1.0, &mut r),
        offsets: random(&[2, 2 * ob], -1.0, 1.0, &mut r),
        modulation: random(&[2, ob], 0.1, 0.9, &mut r),
        weights: random(&[2, cfg.pooled_len(CHANNELS)], -1.0, 1.0, &mut r),
        tubes,
        cfg,
    }
}

fn check_bilinear(seed: u64) -> f64 {
    let mut r = rng(seed, 0);
    let features = random(&[3, TUBE_LEN, 5, 7], -1.0, 1.0, &mut r);
    let xy = Tensor::new(vec![2], vec![r.random_range(-0.5..6.5), r.random_range(-0.5..4.5)]).expect("shape");
    let w = random(&[3], -1.0, 1.0, &mut r);
    let frame = r.random_range(0..TUBE_LEN);
    let coords = some_coords(features.numel(), 60, &mut r);
    let by_coords = check_gradients_at(
        |t, c| {
            let f = t.leaf(&features);
            let s = bilinear_sample(t, f, frame, c)?;
            weighted_sum(t, s, &w)
        },
        &xy,
        EPS,
        &[0, 1],
    );
    let by_features = check_gradients_at(
        |t, f| {
            let c = t.constant(xy.clone());
            let s = bilinear_sample(t, f, frame, c)?;
            weighted_sum(t, s, &w)
        },
        &features,
        EPS,
        &coords,
    );
    by_coords.max(by_features)
}

fn check_standard_pool(seed: u64) -> f64 {
    let c = pool_case(seed);
    let mut r = rng(seed, 2);
    let coords = some_coords(c.features.numel(), 80, &mut r);
    check_gradients_at(
        |t, f| {
            let p = roi_pool_3d(t, f, SCALE, &c.tubes, &c.cfg)?;
            weighted_sum(t, p, &c.weights)
        },
        &c.features,
        EPS,
        &coords,
    )
}

fn check_deformable_pool(seed: u64) -> f64 {
    let c = pool_case(seed);
    let mut r = rng(seed, 3);
    let by_offsets = check_gradients_at(
        |t, o| {
            let f = t.constant(c.features.clone());
            let p = deformable_roi_pool_3d(t, f, SCALE, &c.tubes, o, &c.cfg)?;
            weighted_sum(t, p, &c.weights)
        },
        &c.offsets,
        EPS,
        &some_coords(c.offsets.numel(), 80, &mut r),
    );
    let by_features = check_gradients_at(
        |t, f| {
            let o = t.constant(c.offsets.clone());
            let p = deformable_roi_pool_3d(t, f, SCALE, &c.tubes, o, &c.cfg)?;
            weighted_sum(t, p, &c.weights)
        },
        &c.features,
        EPS,
        &some_coords(c.features.numel(), 80, &mut r),
    );
    by_offsets.max(by_features)
}

fn check_modulated_pool(seed: u64) -> f64 {
    let c = pool_case(seed);
    let mut r = rng(seed, 4);
    let run = |t: &mut Tape, f: Var, o: Var, m: Var| -> Result<Var> {
        let p = modulated_deformable_roi_pool_3d(t, f, SCALE, &c.tubes, o, m, &c.cfg)?;
        weighted_sum(t, p, &c.weights)
    };
    let by_modulation = check_gradients_at(
        |t, m| {
            let f = t.constant(c.features.clone());
            let o = t.constant(c.offsets.clone());
            run(t, f, o, m)
        },
        &c.modulation,
        EPS,
        &some_coords(c.modulation.numel(), 60, &mut r),
    );
    let by_offsets = check_gradients_at(
        |t, o| {
            let f = t.constant(c.features.clone());
            let m = t.constant(c.modulation.clone());
            run(t, f, o, m)
        },
        &c.offsets,
        EPS,
        &some_coords(c.offsets.numel(), 60, &mut r),
    );
    let by_features = check_gradients_at(
        |t, f| {
            let o = t.constant(c.offsets.clone());
            let m = t.constant(c.modulation.clone());
            run(t, f, o, m)
        },
        &c.features,
        EPS,
        &some_coords(c.features.numel(), 60, &mut r),
    );
    by_modulation.max(by_offsets).max(by_features)
}

fn check_offset_predictor(seed: u64) -> f64 {
    let mut r = rng(seed, 5);
    let (k, f, ob) = (3, 10, 4);
    let pooled = random(&[k, f], -1.0, 1.0, &mut r);
    let w = random(&[f, 2 * ob], -0.5, 0.5, &mut r);
    let b = random(&[1, 2 * ob], -0.5, 0.5, &mut r);
    let mw = random(&[f, ob], -0.5, 0.5, &mut r);
    let mb = random(&[1, ob], -0.5, 0.5, &mut r);
    let r_off = random(&[k, 2 * ob], -1.0, 1.0, &mut r);
    let r_mod = random(&[k, ob], -1.0, 1.0, &mut r);
    // inputs in order: pooled, w, b, mw, mb; `which` is the one differentiated
    let inputs = [&pooled, &w, &b, &mw, &mb];
    (0..inputs.len())
        .map(|which| {
            check_gradients_at(
                |t, x| {
                    let vars: Vec<Var> = (0..inputs.len())
                        .map(|i| if i == which { x } else { t.constant(inputs[i].clone()) })
                        .collect();
                    let params = OffsetVars {
                        weight: vars[1],
                        bias: vars[2],
                        modulation: Some((vars[3], vars[4])),
                    };
                    let (o, m) = predict_offsets(t, vars[0], &params)?;
                    let a = weighted_sum(t, o, &r_off)?;
                    let bsum = weighted_sum(t, m.expect("modulated"), &r_mod)?;
                    t.add(a, bsum)
                },
                inputs[which],
                EPS,
                &(0..inputs[which].numel()).collect::<Vec<_>>(),
            )
        })
        .fold(0.0, f64::max)
}

fn random_adjacency(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                a[i * n + j] = 1.0;
                a[j * n + i] = 1.0;
            }
        }
    }
    a
}

fn check_gcn_layer(seed: u64) -> f64 {
    let mut r = rng(seed, 6);
    let (n, d_in, d_out) = (5, 6, 4);
    let a_hat = Tensor::new(vec![n, n], normalize_adjacency(&random_adjacency(n, &mut r), n).expect("square")).expect("shape");
    let h = random(&[n, d_in], -1.0, 1.0, &mut r);
    let w = random(&[d_in, d_out], -1.0, 1.0, &mut r);
    let b = random(&[1, d_out], -0.5, 0.5, &mut r);
    let rw = random(&[n, d_out], -1.0, 1.0, &mut r);
    let inputs = [&h, &w, &b];
    (0..inputs.len())
        .map(|which| {
            check_gradients_at(
                |t, x| {
                    let vars: Vec<Var> = (0..inputs.len())
                        .map(|i| if i == which { x } else { t.constant(inputs[i].clone()) })
                        .collect();
                    let a = t.constant(a_hat.clone());
                    let out = gcn_layer_forward(t, vars[0], a, vars[1], vars[2])?;
                    weighted_sum(t, out, &rw)
                },
                inputs[which],
                EPS,
                &(0..inputs[which].numel()).collect::<Vec<_>>(),
            )
        })
        .fold(0.0, f64::max)
}

fn check_readout(seed: u64) -> f64 {
    let mut r = rng(seed, 7);
    let n = 4;
    let h = random(&[n, 3], -1.0, 1.0, &mut r);
    let m1 = random(&[3, 5], -1.0, 1.0, &mut r);
    let m2 = random(&[5, 2], -1.0, 1.0, &mut r);
    let r_final = random(&[1, 2], -1.0, 1.0, &mut r);
    let r_concat = random(&[1, 3 + 5 + 2], -1.0, 1.0, &mut r);
    let coords: Vec<usize> = (0..h.numel()).collect();
    [Readout::Final, Readout::Concat]
        .into_iter()
        .map(|readout| {
            check_gradients_at(
                |t, x| {
                    let a = t.constant(m1.clone());
                    let b = t.constant(m2.clone());
                    let l1 = t.matmul(x, a)?;
                    let l2 = t.matmul(l1, b)?;
                    let g = graph_readout(t, &[x, l1, l2], readout)?;
                    let rw = if readout == Readout::Final { &r_final } else { &r_concat };
                    weighted_sum(t, g, rw)
                },
                &h,
                EPS,
                &coords,
            )
        })
        .fold(0.0, f64::max)
}

fn check_classifier(seed: u64) -> f64 {
    let mut r = rng(seed, 8);
    let (d, classes) = (6, 4);
    let x = random(&[1, d], -1.0, 1.0, &mut r);
    let w = random(&[d, classes], -1.0, 1.0, &mut r);
    let b = random(&[1, classes], -0.5, 0.5, &mut r);
    let target = r.random_range(0..classes);
    let inputs = [&x, &w, &b];
    (0..inputs.len())
        .map(|which| {
            check_gradients_at(
                |t, v| {
                    let vars: Vec<Var> = (0..inputs.len())
                        .map(|i| if i == which { v } else { t.constant(inputs[i].clone()) })
                        .collect();
                    let c = classify_snippet(
                        t,
                        vars[0],
                        &LayerVars {
                            weight: vars[1],
                            bias: vars[2],
                        },
                    )?;
                    t.softmax_cross_entropy(c.logits, target)
                },
                inputs[which],
                EPS,
                &(0..inputs[which].numel()).collect::<Vec<_>>(),
            )
        })
        .fold(0.0, f64::max)
}
