//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every oracle here is computed independently of the code under test:
//! closed forms, brute-force enumeration, or a second run.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubegraph::checks::{gradient_suite, GRAD_TOLERANCE};
use tubegraph::data::{self, generate_scenarios, snippet_labels, DatasetDir, NoiseConfig, ScenarioConfig, VideoPair};
use tubegraph::deform::{deformable_roi_pool_3d, modulated_deformable_roi_pool_3d, roi_pool_3d, PoolConfig, PoolingMode};
use tubegraph::metrics::{average_precision, greedy_match, temporal_detection_map};
use tubegraph::par::Execution;
use tubegraph::pipeline::{self, detect_activities, smooth_labels, ActivitySegment, Config, Model};
use tubegraph::tensor::{save_checkpoint, Tape, Tensor};
use tubegraph::tube::{
    box_iou, link_micro_tubes, temporal_iou, ActionTube, BBox, LinkConfig, MicroTube, TemporalInterval, TubeChain, TUBE_LEN,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("gradient suite", gradient_criterion),
        ("reduction identity", reduction_criterion),
        ("linear-field oracle", linear_field_criterion),
        ("DP linking oracle", linking_criterion),
        ("smoothing semantics", smoothing_criterion),
        ("metrics oracle", metrics_criterion),
        ("synthetic end-to-end", end_to_end_criterion),
        ("determinism", determinism_criterion),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {}: {name}: {} [{:.1?}]", i + 1, v.detail, start.elapsed());
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// 1 -------------------------------------------------------------------------

fn gradient_criterion() -> Verdict {
    const SEEDS: usize = 25;
    let report = gradient_suite(SEEDS, Execution::Parallel);
    let worst = report
        .checks
        .iter()
        .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
        .expect("checks");
    let fast = report.elapsed < Duration::from_secs(120);
    verdict(
        report.passed() && fast && report.checks.len() == 8,
        format!(
            "{} operations x {SEEDS} seeds, max rel. error {:.2e} ({}) < {GRAD_TOLERANCE:e}, {:.2?} < 120s",
            report.checks.len(),
            worst.max_error,
            worst.name,
            report.elapsed
        ),
    )
}

// 2, 3 ----------------------------------------------------------------------

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tube_with(boxes: Vec<BBox>) -> ActionTube {
    ActionTube {
        id: 0,
        snippet_index: 0,
        first_frame: 1,
        boxes,
        action_label: 0,
        confidence: 1.0,
    }
}

fn pool_values(f: impl FnOnce(&mut Tape) -> tubegraph::Result<tubegraph::tensor::Var>) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.value(v).data().to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn reduction_criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut zero_err, mut unit_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let c = rng.random_range(1..4);
        let (h, w) = (rng.random_range(4..10), rng.random_range(4..10));
        let scale = [0.25, 0.5, 1.0][rng.random_range(0..3)];
        let cfg = PoolConfig {
            bins: rng.random_range(1..4),
            samples: rng.random_range(1..3),
            gamma: 0.1,
            shared_offsets: rng.random_bool(0.5),
        };
        let (iw, ih) = (w as f64 / scale, h as f64 / scale);
        let tubes: Vec<ActionTube> = (0..rng.random_range(1..4))
            .map(|_| {
                tube_with(
                    (0..TUBE_LEN)
                        .map(|_| {
                            let x1 = rng.random_range(-0.2 * iw..0.9 * iw);
                            let y1 = rng.random_range(-0.2 * ih..0.9 * ih);
                            BBox::new(x1, y1, x1 + rng.random_range(0.0..iw), y1 + rng.random_range(0.0..ih))
                        })
                        .collect(),
                )
            })
            .collect();
        let feats = random_tensor(&[c, TUBE_LEN, h, w], &mut rng);
        let k = tubes.len();
        let ob = cfg.offset_bins();
        let offsets = random_tensor(&[k, 2 * ob], &mut rng);

        let standard = pool_values(|t| {
            let f = t.constant(feats.clone());
            roi_pool_3d(t, f, scale, &tubes, &cfg)
        });
        let zero = pool_values(|t| {
            let f = t.constant(feats.clone());
            let o = t.constant(Tensor::zeros(vec![k, 2 * ob]));
            deformable_roi_pool_3d(t, f, scale, &tubes, o, &cfg)
        });
        let deformed = pool_values(|t| {
            let f = t.constant(feats.clone());
            let o = t.constant(offsets.clone());
            deformable_roi_pool_3d(t, f, scale, &tubes, o, &cfg)
        });
        let unit = pool_values(|t| {
            let f = t.constant(feats.clone());
            let o = t.constant(offsets.clone());
            let m = t.constant(Tensor::full(vec![k, ob], 1.0));
            modulated_deformable_roi_pool_3d(t, f, scale, &tubes, o, m, &cfg)
        });
        zero_err = zero_err.max(max_diff(&standard, &zero));
        unit_err = unit_err.max(max_diff(&deformed, &unit));
    }
    verdict(
        zero_err <= 1e-12 && unit_err <= 1e-12,
        format!("100 instances: |deformable(0) - standard| = {zero_err:.1e}, |modulated(1) - deformable| = {unit_err:.1e} (<= 1e-12)"),
    )
}

fn linear_field_criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w, scale) = (24usize, 32usize, 0.5);
    let mut worst = 0.0f64;
    let mut bins_checked = 0usize;
    for _ in 0..50 {
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mut data = Vec::with_capacity(TUBE_LEN * h * w);
        for _t in 0..TUBE_LEN {
            for y in 0..h {
                for x in 0..w {
                    data.push(a * x as f64 + b * y as f64);
                }
            }
        }
        let feats = Tensor::new(vec![1, TUBE_LEN, h, w], data).unwrap();
        let cfg = PoolConfig {
            bins: rng.random_range(1..5),
            samples: rng.random_range(1..4),
            gamma: 0.1,
            shared_offsets: false,
        };
        // boxes (in pixels) and offsets small enough that every shifted
        // sample stays inside the grid, where bilinear sampling is exact
        let boxes: Vec<BBox> = (0..TUBE_LEN)
            .map(|_| {
                let x1 = rng.random_range(10.0..20.0);
                let y1 = rng.random_range(10.0..14.0);
                BBox::new(x1, y1, x1 + rng.random_range(4.0..30.0), y1 + rng.random_range(4.0..20.0))
            })
            .collect();
        let tubes = vec![tube_with(boxes.clone())];
        let ob = cfg.offset_bins();
        let offsets = Tensor::new(vec![1, 2 * ob], (0..2 * ob).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let standard = pool_values(|t| {
            let f = t.constant(feats.clone());
            roi_pool_3d(t, f, scale, &tubes, &cfg)
        });
        let deformed = pool_values(|t| {
            let f = t.constant(feats.clone());
            let o = t.constant(offsets.clone());
            deformable_roi_pool_3d(t, f, scale, &tubes, o, &cfg)
        });
        let k = cfg.bins;
        for (t, bx) in boxes.iter().enumerate() {
            // box size in feature cells
            let (bw, bh) = (bx.width() * scale, bx.height() * scale);
            for i in 0..k * k {
                let o = (t * k * k + i) * 2;
                let (ox, oy) = (offsets.data()[o], offsets.data()[o + 1]);
                let expected = a * 0.1 * ox * bw + b * 0.1 * oy * bh;
                let got = deformed[t * k * k + i] - standard[t * k * k + i];
                worst = worst.max((got - expected).abs());
                bins_checked += 1;
            }
        }
    }
    verdict(
        worst <= 1e-10,
        format!("{bins_checked} bins on f = a*x + b*y: max |shift - (a*0.1*ox*w + b*0.1*oy*h)| = {worst:.1e} (<= 1e-10)"),
    )
}

// 4 -------------------------------------------------------------------------

/// Boxes whose pairwise IoUs are 0, 1/2 or 1, so every path score is exact.
fn lattice_box(i: usize) -> BBox {
    [
        BBox::new(0.0, 0.0, 2.0, 1.0),
        BBox::new(0.0, 0.0, 1.0, 1.0),
        BBox::new(1.0, 0.0, 2.0, 1.0),
    ][i % 3]
}

fn micro(score: &[f64], start: usize, end: usize) -> MicroTube {
    MicroTube {
        start_frame: 1,
        gap: 3,
        start_box: lattice_box(start),
        end_box: lattice_box(end),
        class_scores: score.to_vec(),
    }
}

/// Exhaustive reference: for each class, enumerate every full-length path
/// through every maximal run of steps with live candidates, keep the best
/// (earlier run, then lexicographically smallest candidate indices read
/// from the last step backwards), remove it and repeat.
fn link_oracle(steps: &[Vec<MicroTube>], cfg: &LinkConfig) -> Vec<TubeChain> {
    let n_classes = steps.iter().flatten().map(|m| m.class_scores.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for class in 0..n_classes {
        let s = |m: &MicroTube| m.class_scores.get(class).copied().unwrap_or(0.0);
        let mut alive: Vec<Vec<bool>> = steps.iter().map(|st| st.iter().map(|m| s(m) >= cfg.min_score).collect()).collect();
        loop {
            let mut runs = Vec::new();
            let mut t = 0;
            while t < steps.len() {
                if alive[t].iter().any(|&a| a) {
                    let start = t;
                    while t < steps.len() && alive[t].iter().any(|&a| a) {
                        t += 1;
                    }
                    runs.push((start, t));
                } else {
                    t += 1;
                }
            }
            let mut best: Option<(f64, usize, Vec<usize>)> = None;
            for (start, end) in runs {
                let mut run_best: Option<(f64, Vec<usize>)> = None;
                let mut path = vec![0usize; end - start];
                loop {
                    let valid = path
                        .iter()
                        .enumerate()
                        .all(|(j, &c)| c < steps[start + j].len() && alive[start + j][c]);
                    if valid {
                        let mut acc = s(&steps[start][path[0]]);
                        for j in 1..path.len() {
                            let prev = &steps[start + j - 1][path[j - 1]];
                            let cur = &steps[start + j][path[j]];
                            acc = (acc + cfg.lambda * box_iou(&prev.end_box, &cur.start_box)) + s(cur);
                        }
                        let rev: Vec<usize> = path.iter().rev().copied().collect();
                        let better = match &run_best {
                            None => true,
                            Some((v, p)) => acc > *v || (acc == *v && rev < p.iter().rev().copied().collect::<Vec<_>>()),
                        };
                        if better {
                            run_best = Some((acc, path.clone()));
                        }
                    }
                    // odometer over candidate indices
                    let mut j = 0;
                    loop {
                        if j == path.len() {
                            break;
                        }
                        path[j] += 1;
                        if path[j] < steps[start + j].len() {
                            break;
                        }
                        path[j] = 0;
                        j += 1;
                    }
                    if j == path.len() {
                        break;
                    }
                }
                if let Some((v, p)) = run_best {
                    if best.as_ref().is_none_or(|(bv, _, _)| v > *bv) {
                        best = Some((v, start, p));
                    }
                }
            }
            let Some((score, start, members)) = best else { break };
            for (j, &m) in members.iter().enumerate() {
                alive[start + j][m] = false;
            }
            out.push(TubeChain {
                class,
                start_step: start,
                members,
                score,
            });
        }
    }
    out
}

fn linking_criterion() -> Verdict {
    const LATTICE: [f64; 3] = [0.0, 0.5, 1.0];
    let cfg = LinkConfig {
        lambda: 1.0,
        min_score: 0.5,
    };
    let mut instances = 0usize;
    let mut mismatches = 0usize;
    let mut first_bad = String::new();
    // every shape of up to 3 steps x 3 candidates, every single-class score
    // assignment over the lattice; boxes follow a fixed pattern per shape
    for n_steps in 1..=3usize {
        for shape_code in 0..4usize.pow(n_steps as u32) {
            let shape: Vec<usize> = (0..n_steps).map(|t| (shape_code / 4usize.pow(t as u32)) % 4).collect();
            let total: usize = shape.iter().sum();
            for score_code in 0..3usize.pow(total as u32) {
                for pattern in 0..2 {
                    let mut k = 0;
                    let steps: Vec<Vec<MicroTube>> = shape
                        .iter()
                        .map(|&n| {
                            (0..n)
                                .map(|_| {
                                    let sc = LATTICE[(score_code / 3usize.pow(k as u32)) % 3];
                                    let m = micro(&[sc], k * (pattern + 1), k + pattern);
                                    k += 1;
                                    m
                                })
                                .collect()
                        })
                        .collect();
                    instances += 1;
                    let got = link_micro_tubes(&steps, &cfg);
                    let want = link_oracle(&steps, &cfg);
                    if got != want {
                        mismatches += 1;
                        if first_bad.is_empty() {
                            first_bad = format!(" first mismatch: shape {shape:?} scores #{score_code}");
                        }
                    }
                }
            }
        }
    }
    // two classes, random lattice scores and boxes
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20_000 {
        let n_steps = rng.random_range(1..=3);
        let steps: Vec<Vec<MicroTube>> = (0..n_steps)
            .map(|_| {
                (0..rng.random_range(0..=3))
                    .map(|_| {
                        let s = [LATTICE[rng.random_range(0..3)], LATTICE[rng.random_range(0..3)]];
                        micro(&s, rng.random_range(0..3), rng.random_range(0..3))
                    })
                    .collect()
            })
            .collect();
        let cfg = LinkConfig {
            lambda: [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)],
            min_score: [0.0, 0.5][rng.random_range(0..2)],
        };
        instances += 1;
        if link_micro_tubes(&steps, &cfg) != link_oracle(&steps, &cfg) {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{instances} instances (<= 3 steps x <= 3 candidates), {mismatches} disagreements with exhaustive enumeration{first_bad}"),
    )
}

// 5 -------------------------------------------------------------------------

fn smoothing_criterion() -> Verdict {
    const A: usize = 0;
    const B: usize = 1;
    let examples: [(&[usize], &[usize]); 3] = [(&[A, A, B, A, A], &[A, A, A, A, A]), (&[A, A, B, B], &[A, A, B, B]), (&[A], &[A])];
    let examples_ok = examples.iter().all(|(x, y)| smooth_labels(x) == *y);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut not_idempotent, mut new_labels, mut bad_branch) = (0, 0, 0);
    for _ in 0..10_000 {
        let n: usize = rng.random_range(1..25);
        let alphabet = rng.random_range(1..5);
        let x: Vec<usize> = (0..n).map(|_| rng.random_range(0..alphabet)).collect();
        let y = smooth_labels(&x);
        if smooth_labels(&y) != y {
            not_idempotent += 1;
        }
        if y.iter().any(|l| !x.contains(l)) {
            new_labels += 1;
        }
        // branch table: position i is rewritten exactly when it differs from
        // its (smoothed) predecessor and the next raw label equals that
        // predecessor; the first and last positions are never rewritten
        let mut want = x.clone();
        for i in 1..n.saturating_sub(1) {
            if want[i] != want[i - 1] && x[i + 1] == want[i - 1] {
                want[i] = want[i - 1];
            }
        }
        if y != want || y.len() != n || (n > 0 && (y[0] != x[0] || y[n - 1] != x[n - 1])) {
            bad_branch += 1;
        }
    }
    verdict(
        examples_ok && not_idempotent == 0 && new_labels == 0 && bad_branch == 0,
        format!(
            "3 tabled examples {}; 10^4 random sequences: {not_idempotent} non-idempotent, {new_labels} with new labels, {bad_branch} off the branch table",
            if examples_ok { "reproduced" } else { "NOT reproduced" }
        ),
    )
}

// 6 -------------------------------------------------------------------------

/// Exhaustive reference for greedy matching: among all one-to-one
/// assignments of detections to ground truths with IoU >= delta, the one
/// whose per-detection (IoU, lower index) sequence, read in descending score
/// order, is lexicographically greatest. Also returns the maximum number of
/// matches any assignment achieves.
fn matching_oracle(scores: &[f64], iou: &[Vec<f64>], n_gt: usize, delta: f64) -> (Vec<bool>, usize) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut best: Option<Vec<(f64, i64)>> = None;
    let mut best_tp = vec![false; scores.len()];
    let mut max_matches = 0;
    let mut assign: Vec<Option<usize>> = vec![None; order.len()];
    fn rec(
        pos: usize,
        order: &[usize],
        iou: &[Vec<f64>],
        n_gt: usize,
        delta: f64,
        used: &mut Vec<bool>,
        assign: &mut Vec<Option<usize>>,
        visit: &mut dyn FnMut(&[Option<usize>]),
    ) {
        if pos == order.len() {
            visit(assign);
            return;
        }
        assign[pos] = None;
        rec(pos + 1, order, iou, n_gt, delta, used, assign, visit);
        for g in 0..n_gt {
            if !used[g] && iou[order[pos]][g] >= delta {
                used[g] = true;
                assign[pos] = Some(g);
                rec(pos + 1, order, iou, n_gt, delta, used, assign, visit);
                used[g] = false;
            }
        }
        assign[pos] = None;
    }
    let mut used = vec![false; n_gt];
    rec(0, &order, iou, n_gt, delta, &mut used, &mut assign, &mut |a| {
        let key: Vec<(f64, i64)> = a
            .iter()
            .enumerate()
            .map(|(p, g)| match g {
                Some(g) => (iou[order[p]][*g], -(*g as i64)),
                None => (f64::NEG_INFINITY, 0),
            })
            .collect();
        max_matches = max_matches.max(a.iter().filter(|g| g.is_some()).count());
        let better = match &best {
            None => true,
            Some(b) => key.partial_cmp(b) == Some(std::cmp::Ordering::Greater),
        };
        if better {
            best = Some(key);
            best_tp = vec![false; order.len()];
            for (p, g) in a.iter().enumerate() {
                best_tp[order[p]] = g.is_some();
            }
        }
    });
    (best_tp, max_matches)
}

/// AP from first principles: rank by score (true positives first on ties),
/// average the precision at each true positive over the ground truths.
fn ap_oracle(scores: &[f64], tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if scores.is_empty() { None } else { Some(0.0) };
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(tp[b].cmp(&tp[a])).then(a.cmp(&b)));
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        if tp[i] {
            hits += 1.0;
            sum += hits / (r as f64 + 1.0);
        }
    }
    Some(sum / n_gt as f64)
}

fn random_interval(rng: &mut ChaCha8Rng) -> TemporalInterval {
    let s = rng.random_range(1..12);
    TemporalInterval::new(s, s + rng.random_range(0..6)).unwrap()
}

fn metrics_criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut instances, mut flag_err, mut ap_err, mut bound_err, mut below_max) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for n_det in 0..=5usize {
        for n_gt in 0..=5usize {
            for _ in 0..400 {
                let dets: Vec<TemporalInterval> = (0..n_det).map(|_| random_interval(&mut rng)).collect();
                let gts: Vec<TemporalInterval> = (0..n_gt).map(|_| random_interval(&mut rng)).collect();
                let scores: Vec<f64> = (0..n_det).map(|_| [0.25, 0.5, 0.75, 1.0][rng.random_range(0..4)]).collect();
                let delta = [0.1, 0.2, 0.3, 0.5, 0.7, 1.0][rng.random_range(0..6)];
                let iou: Vec<Vec<f64>> = dets.iter().map(|d| gts.iter().map(|g| temporal_iou(d, g)).collect()).collect();
                let m = greedy_match(&scores, n_gt, |d, g| iou[d][g], delta);
                let (tp, max_matches) = matching_oracle(&scores, &iou, n_gt, delta);
                let got: Vec<bool> = m.detections.iter().map(|d| d.1).collect();
                instances += 1;
                if got != tp {
                    flag_err += 1;
                }
                let a = average_precision(&m);
                let b = ap_oracle(&scores, &tp, n_gt);
                if !(a == b || matches!((a, b), (Some(x), Some(y)) if (x - y).abs() < 1e-12)) {
                    ap_err += 1;
                }
                let k = m.true_positives();
                // greedy is maximal, hence at least half the maximum
                if k > max_matches || 2 * k < max_matches {
                    bound_err += 1;
                }
                if k < max_matches {
                    below_max += 1;
                }
            }
        }
    }

    // monotonicity of mAP in the threshold
    let thresholds: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
    let mut violations = 0usize;
    for _ in 0..1000 {
        let n_videos = rng.random_range(1..4);
        let n_classes = rng.random_range(1..4);
        let seg = |rng: &mut ChaCha8Rng| ActivitySegment {
            label: rng.random_range(0..n_classes) as u32,
            interval: {
                let s = rng.random_range(1..60);
                TemporalInterval::new(s, s + rng.random_range(0..25)).unwrap()
            },
            score: rng.random_range(0.0..1.0),
        };
        let dets: Vec<Vec<ActivitySegment>> = (0..n_videos)
            .map(|_| (0..rng.random_range(0..6)).map(|_| seg(&mut rng)).collect())
            .collect();
        let gts: Vec<Vec<ActivitySegment>> = (0..n_videos)
            .map(|_| (0..rng.random_range(0..6)).map(|_| seg(&mut rng)).collect())
            .collect();
        let maps: Vec<f64> = thresholds
            .iter()
            .map(|&d| temporal_detection_map(&dets, &gts, n_classes as usize, d).unwrap().map)
            .collect();
        if maps.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            violations += 1;
        }
    }
    verdict(
        flag_err == 0 && ap_err == 0 && bound_err == 0 && violations == 0,
        format!(
            "{instances} instances (<= 5 detections/ground truths): {flag_err} match disagreements, {ap_err} AP disagreements, \
             {bound_err} outside [max/2, max] ({below_max} below maximum cardinality); 10^3 random mAP curves: {violations} increases in delta"
        ),
    )
}

// 7 -------------------------------------------------------------------------

/// Model configuration of the synthetic benchmark.
fn benchmark_config(pooling: PoolingMode, seed: u64, epochs: usize) -> Config {
    Config {
        pooling,
        seed,
        epochs,
        channels: 16,
        ..Config::default()
    }
}

struct RunResult {
    accuracy: f64,
    map_05: f64,
    losses: Vec<f64>,
}

fn pairs(data: &data::GeneratedDataset, range: std::ops::Range<usize>) -> Vec<VideoPair> {
    range
        .map(|i| VideoPair {
            video: data.clean[i].clone(),
            detections: data.noisy[i].clone(),
        })
        .collect()
}

fn run_benchmark(scenario: &ScenarioConfig, configs: &[Config]) -> Vec<RunResult> {
    let data = generate_scenarios(scenario, Execution::Parallel).unwrap();
    let n_train = scenario.n_videos - scenario.n_test;
    let train_pairs = pairs(&data, 0..n_train);
    let test_pairs = pairs(&data, n_train..scenario.n_videos);
    let n_classes = scenario.grammar.len() + 1;
    let mut out = Vec::new();
    let mut cached: Option<(Config, Vec<pipeline::Sample>, Vec<pipeline::Sample>)> = None;
    for config in configs {
        // samples depend only on rendering and pooling geometry
        let reuse = cached.as_ref().is_some_and(|(c, _, _)| {
            c.channels == config.channels
                && c.feature_size == config.feature_size
                && c.k == config.k
                && c.n_s == config.n_s
                && c.seed == config.seed
        });
        if !reuse {
            let tr = data::samples(&train_pairs, config, Execution::Parallel).unwrap();
            let te = data::samples(&test_pairs, config, Execution::Parallel).unwrap();
            cached = Some((config.clone(), tr, te));
        }
        let (_, train_set, test_set) = cached.as_ref().unwrap();
        let outcome = pipeline::train(train_set, &[], config, n_classes, Execution::Parallel, |_| {}).unwrap();
        let model: &Model = &outcome.best;
        let (mut hits, mut total) = (0usize, 0usize);
        let mut dets = Vec::new();
        let mut truth = Vec::new();
        let mut offset = 0;
        for p in &test_pairs {
            let labels = snippet_labels(&p.video, config).unwrap();
            let inputs: Vec<_> = test_set[offset..offset + labels.len()].iter().map(|s| s.input.clone()).collect();
            offset += labels.len();
            let (preds, segments) = detect_activities(model, &inputs, Execution::Parallel).unwrap();
            hits += preds.iter().zip(&labels).filter(|(p, l)| p.label == **l).count();
            total += labels.len();
            dets.push(segments);
            truth.push(p.video.activities.clone());
        }
        let map_05 = temporal_detection_map(&dets, &truth, scenario.grammar.len(), 0.5).unwrap().map;
        out.push(RunResult {
            accuracy: hits as f64 / total as f64,
            map_05,
            losses: outcome.log.iter().map(|e| e.loss).collect(),
        });
    }
    out
}

fn end_to_end_criterion() -> Verdict {
    const EPOCHS: usize = 12;
    const NOISE_EPOCHS: usize = 10;
    let start = Instant::now();
    let scenario = ScenarioConfig {
        seed: 0,
        ..ScenarioConfig::road()
    };
    assert_eq!(
        (scenario.n_videos - scenario.n_test, scenario.n_test, scenario.grammar.len()),
        (40, 10, 6)
    );
    let clean = &run_benchmark(&scenario, &[benchmark_config(PoolingMode::Deformable, 0, EPOCHS)])[0];
    let clean_time = start.elapsed();
    let five = &clean.losses[..5.min(clean.losses.len())];
    let loss_monotone = five.windows(2).all(|w| w[1] <= w[0]);

    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let noisy = ScenarioConfig {
            seed,
            noise: NoiseConfig {
                jitter_sigma: 2.0,
                drop_prob: 0.1,
                flip_prob: 0.05,
            },
            ..ScenarioConfig::road()
        };
        let r = run_benchmark(
            &noisy,
            &[
                benchmark_config(PoolingMode::Deformable, seed, NOISE_EPOCHS),
                benchmark_config(PoolingMode::Standard, seed, NOISE_EPOCHS),
            ],
        );
        per_seed.push((r[0].accuracy, r[1].accuracy));
    }
    let mean = |f: fn(&(f64, f64)) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64;
    let (deform_mean, standard_mean) = (mean(|p| p.0), mean(|p| p.1));
    let elapsed = start.elapsed();
    let pass = clean.accuracy >= 0.95 && clean.map_05 >= 0.90 && deform_mean >= standard_mean && elapsed < Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "clean ({EPOCHS} epochs, {clean_time:.0?}): accuracy {:.3} (>= 0.95), temporal mAP@0.5 {:.3} (>= 0.90), first-5-epoch loss {}; \
             noisy ({NOISE_EPOCHS} epochs, seeds 0-2): deformable {} mean {deform_mean:.3} vs standard {} mean {standard_mean:.3}; total {elapsed:.0?} (< 30 min)",
            clean.accuracy,
            clean.map_05,
            if loss_monotone { "non-increasing" } else { "INCREASED" },
            fmt_list(per_seed.iter().map(|p| p.0)),
            fmt_list(per_seed.iter().map(|p| p.1)),
        ),
    )
}

fn fmt_list(v: impl Iterator<Item = f64>) -> String {
    let items: Vec<String> = v.map(|x| format!("{x:.3}")).collect();
    format!("[{}]", items.join(", "))
}

// 8 -------------------------------------------------------------------------

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism_criterion() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = ScenarioConfig {
        n_videos: 6,
        n_test: 2,
        seed: 11,
        noise: NoiseConfig {
            jitter_sigma: 1.5,
            drop_prob: 0.2,
            flip_prob: 0.1,
        },
        ..ScenarioConfig::road()
    };
    let write = |name: &str, mode| {
        let dir = tmp.path().join(name);
        let data = generate_scenarios(&scenario, mode).unwrap();
        DatasetDir::write(&dir, &scenario, &data).unwrap();
        files_under(&dir)
    };
    let g1 = write("g1", Execution::Parallel);
    let g2 = write("g2", Execution::Parallel);
    let g3 = write("g3", Execution::Sequential);
    let generate_same = g1 == g2 && g1 == g3 && g1.len() == 2 * scenario.n_videos + 1;

    let config = Config {
        channels: 4,
        feature_size: 12,
        k: 3,
        offset_hidden: 8,
        d_node: 16,
        d_h: 16,
        d_out: 32,
        epochs: 3,
        batch_size: 4,
        seed: 5,
        pooling: PoolingMode::Modulated,
        ..Config::default()
    };
    let ds = DatasetDir::open(&tmp.path().join("g1")).unwrap();
    let train_pairs = ds.load_split(data::Split::Train).unwrap();
    let n_classes = data::class_count(&train_pairs[0].video, &config);
    let checkpoint = |name: &str, mode| {
        let samples = data::samples(&train_pairs, &config, mode).unwrap();
        let out = pipeline::train(&samples, &[], &config, n_classes, mode, |_| {}).unwrap();
        let path = tmp.path().join(name);
        save_checkpoint(&out.best.params, &path).unwrap();
        std::fs::read(path).unwrap()
    };
    let c1 = checkpoint("a.bin", Execution::Parallel);
    let c2 = checkpoint("b.bin", Execution::Parallel);
    let c3 = checkpoint("c.bin", Execution::Sequential);
    let train_same = c1 == c2 && c1 == c3;
    verdict(
        generate_same && train_same,
        format!(
            "generate: {} files byte-identical across 3 runs: {generate_same}; train: {}-byte checkpoints byte-identical across 3 runs: {train_same}",
            g1.len(),
            c1.len()
        ),
    )
}
